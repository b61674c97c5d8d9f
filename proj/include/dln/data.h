// dln/data.h

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef DLN_DATA_H_
#define DLN_DATA_H_

#include <cstdint>
#include <string>
#include <vector>

#include "dln/recurrent.h"
#include "dln/tensor.h"

namespace dln {

struct Utterance {
  std::string utterance_id;
  std::string speaker_id;
  Array frames;                      // [T x D]
  std::vector<std::int32_t> labels;  // length T
};

struct Dataset {
  std::vector<Utterance> utterances;
  Index frame_dim = 0;
  Index num_classes = 0;
};

// Multi-speaker frame-classification task. Each class has a Gaussian
// prototype; each speaker distorts frames with a per-dimension affine map
// (gain and offset), modeling speaker/channel variability. Labels follow a
// sticky Markov walk over classes.
struct SyntheticSpec {
  Index num_speakers = 16;  // total, including held-out speakers
  Index utterances_per_speaker = 50;
  Index frame_dim = 16;
  Index num_classes = 8;
  Index len_min = 20;
  Index len_max = 40;
  double noise = 0.3;       // stddev of additive Gaussian noise
  double stay_prob = 0.85;  // Markov label walk self-transition probability
  double gain_spread = 0.8;    // log-gain ~ Uniform(-spread, spread) per dim
  double offset_spread = 1.0;  // offset ~ spread * Normal(0,1) per dim
  std::uint64_t seed = 1;
  // Speakers reserved for the dev/test splits; they never appear in train.
  Index held_out_dev = 2;
  Index held_out_test = 2;

  void validate() const;
};

struct SpeakerTransform {
  std::vector<double> gain;
  std::vector<double> offset;
};

struct SyntheticData {
  Dataset train, dev, test;
  // Ground truth, exposed so tests can verify separability analytically.
  std::vector<std::vector<double>> prototypes;  // [num_classes][frame_dim]
  std::vector<SpeakerTransform> speakers;       // indexed by speaker number
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

// Dataset container: a directory holding manifest.json, frames.f32
// (little-endian float32, row-major) and labels.i32 (little-endian int32).
// Feature values surviving a round trip exactly is guaranteed because
// gen_synthetic already quantizes frames to float32.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// One exported utterance summary (module adapt) with its speaker label.
struct SummaryRecord {
  std::string utterance_id;
  std::string speaker_id;
  Index layer = 0;        // 1-based
  std::string direction;  // "fwd" or "bwd"
  std::vector<double> values;
};

// Runs the DLN stack over every utterance and collects the summary vectors
// of the requested (1-based) layers, both directions. Errors if the model
// was not built with DLN enabled, or a layer index is out of range.
std::vector<SummaryRecord> export_summaries(const Model& model,
                                            const Dataset& ds,
                                            const std::vector<Index>& layers);

void write_summaries_csv(const std::vector<SummaryRecord>& records,
                         const std::string& path);

// Purity of a seeded k-means clustering of the records' vectors:
//   purity = (1/N) sum over clusters of the count of the cluster's most
//   frequent speaker.
// Records would normally share one layer/direction. Errors if records is
// empty, k < 1, or k exceeds the record count.
double cluster_purity(const std::vector<SummaryRecord>& records, Index k,
                      std::uint64_t seed);

}  // namespace dln

#endif  // DLN_DATA_H_
