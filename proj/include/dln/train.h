// dln/train.h

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

#ifndef DLN_TRAIN_H_
#define DLN_TRAIN_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "dln/data.h"
#include "dln/recurrent.h"
#include "dln/rng.h"
#include "dln/tensor.h"

namespace dln {

// Mean over valid frames of -log softmax(logits_t)[target_t], as one fused
// differentiable primitive (log-sum-exp with max subtraction). Errors on
// out-of-range targets and on all-masked input.
Tensor softmax_nll(const Tensor& logits,
                   const std::vector<std::int32_t>& targets,
                   const std::vector<std::uint8_t>& mask);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment accumulators, one per parameter in canonical order.
struct AdamState {
  std::vector<Array> m, v;
  std::int64_t t = 0;
};

AdamState make_adam_state(const StackConfig& cfg);

// One bias-corrected Adam update, in place. grads must be in canonical
// parameter order; non-finite gradients are an error.
void adam_step(Model* model, const std::vector<Array>& grads, AdamState* state,
               const AdamConfig& cfg);

// Scales grads so their global L2 norm is at most clip. clip <= 0 disables.
void clip_gradients(std::vector<Array>* grads, double clip);

// Matrix with orthonormal rows (rows <= cols) or columns (rows > cols):
// seeded Gaussian draw followed by (twice-applied) modified Gram-Schmidt.
Array orthogonal_init(Index rows, Index cols, Rng* rng);

// Weight matrices orthogonal; LN scales and generated-scale biases 1;
// every shift and remaining bias 0.
void init_model(Model* model, std::uint64_t seed);

struct TrainConfig {
  Index batch_size = 16;
  Index epochs = 10;
  std::uint64_t seed = 1;
  double lambda = 0.0;    // variance-penalty weight
  double grad_clip = 0.0; // global-norm clip, 0 = off
  AdamConfig adam;
};

// Zero-padded view of one utterance inside a batch.
struct PaddedUtterance {
  Array frames;                      // [t_max x D]
  std::vector<std::int32_t> labels;  // length t_max, 0 beyond the utterance
  std::vector<std::uint8_t> mask;    // 1 on the valid prefix
};

PaddedUtterance pad_to(const Utterance& utt, Index t_max);

// Deterministic batch composition: utterances are bucketed by length (to
// limit padding waste) and the bucket order is shuffled with the given rng.
std::vector<std::vector<Index>> make_batches(const Dataset& ds,
                                             Index batch_size, Rng* rng);

struct EpochStats {
  double mean_loss = 0.0;     // mean over batches of the batch NLL
  double mean_penalty = 0.0;  // mean over batches of the variance penalty
  double train_fer = 0.0;     // on-the-fly FER over the epoch's batches
  double dev_fer = 0.0;       // filled in by fit()
};

// One optimization pass over the dataset (shuffle, pad, forward, backward,
// Adam). Any non-finite value aborts the epoch with a diagnostic.
EpochStats train_epoch(Model* model, const Dataset& train,
                       const TrainConfig& cfg, Index epoch, AdamState* adam);

// Errors among valid frames; argmax ties resolve to the lowest class index.
Index frame_errors(const Array& logits, const std::vector<std::int32_t>& targets,
                   const std::vector<std::uint8_t>& mask);

// 100 * errors / valid frames over the whole dataset.
double frame_error_rate(const Model& model, const Dataset& ds);

struct FitResult {
  Model best;           // parameters with the lowest dev FER
  Index best_epoch = 0; // 0 when epochs == 0 (initialization returned)
  std::vector<EpochStats> epochs;
};

// Full training driver with best-dev checkpoint selection (FER ties keep
// the earlier epoch). on_epoch, when set, observes each epoch's stats.
FitResult fit(Model init, const Dataset& train, const Dataset& dev,
              const TrainConfig& cfg,
              const std::function<void(Index, const EpochStats&)>& on_epoch);

}  // namespace dln

#endif  // DLN_TRAIN_H_
