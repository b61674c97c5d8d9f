// data.cc

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

#include "dln/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "dln/rng.h"

namespace dln {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticSpec::validate() const {
  if (num_speakers < 2) fail("SyntheticSpec: need at least 2 speakers");
  if (num_classes < 2) fail("SyntheticSpec: need at least 2 classes");
  if (utterances_per_speaker < 1)
    fail("SyntheticSpec: utterances_per_speaker must be >= 1");
  if (frame_dim < 1) fail("SyntheticSpec: frame_dim must be >= 1");
  if (len_min < 1 || len_max < len_min)
    fail("SyntheticSpec: need 1 <= len_min <= len_max");
  if (noise < 0.0) fail("SyntheticSpec: noise must be >= 0");
  if (stay_prob < 0.0 || stay_prob > 1.0)
    fail("SyntheticSpec: stay_prob must be in [0,1]");
  if (gain_spread < 0.0 || offset_spread < 0.0)
    fail("SyntheticSpec: spreads must be >= 0");
  if (held_out_dev < 0 || held_out_test < 0)
    fail("SyntheticSpec: held-out counts must be >= 0");
  if (held_out_dev + held_out_test >= num_speakers)
    fail("SyntheticSpec: " + std::to_string(held_out_dev + held_out_test) +
         " held-out speakers requested but only " +
         std::to_string(num_speakers) +
         " exist; at least one speaker must remain for training");
}

namespace {

std::string speaker_name(Index s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%03lld", static_cast<long long>(s));
  return buf;
}

// Frames are quantized to float32 at generation time so that the on-disk
// container round-trips every value exactly.
double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index D = spec.frame_dim;
  const Index C = spec.num_classes;

  SyntheticData out;
  out.prototypes.assign(static_cast<std::size_t>(C),
                        std::vector<double>(static_cast<std::size_t>(D)));
  for (auto& proto : out.prototypes)
    for (double& v : proto) v = rng.normal();

  out.speakers.resize(static_cast<std::size_t>(spec.num_speakers));
  for (auto& spk : out.speakers) {
    spk.gain.resize(static_cast<std::size_t>(D));
    spk.offset.resize(static_cast<std::size_t>(D));
    for (double& g : spk.gain)
      g = std::exp(spec.gain_spread * rng.uniform(-1.0, 1.0));
    for (double& o : spk.offset) o = spec.offset_spread * rng.normal();
  }

  const Index num_train = spec.num_speakers - spec.held_out_dev -
                          spec.held_out_test;
  for (Dataset* ds : {&out.train, &out.dev, &out.test}) {
    ds->frame_dim = D;
    ds->num_classes = C;
  }

  for (Index s = 0; s < spec.num_speakers; ++s) {
    Dataset* ds = &out.train;
    if (s >= num_train) ds = s < num_train + spec.held_out_dev ? &out.dev
                                                               : &out.test;
    const SpeakerTransform& spk = out.speakers[static_cast<std::size_t>(s)];
    for (Index u = 0; u < spec.utterances_per_speaker; ++u) {
      const Index len =
          spec.len_min +
          static_cast<Index>(rng.uniform_int(
              static_cast<std::uint64_t>(spec.len_max - spec.len_min + 1)));
      Utterance utt;
      utt.speaker_id = speaker_name(s);
      char ubuf[32];
      std::snprintf(ubuf, sizeof(ubuf), "%s_u%04lld", utt.speaker_id.c_str(),
                    static_cast<long long>(u));
      utt.utterance_id = ubuf;
      utt.labels.resize(static_cast<std::size_t>(len));
      Index cls = static_cast<Index>(rng.uniform_int(
          static_cast<std::uint64_t>(C)));
      utt.frames = Array(Shape{len, D});
      for (Index t = 0; t < len; ++t) {
        if (t > 0 && rng.uniform() >= spec.stay_prob) {
          // Jump to a different class, uniformly over the remaining ones.
          Index jump = static_cast<Index>(rng.uniform_int(
              static_cast<std::uint64_t>(C - 1)));
          cls = jump >= cls ? jump + 1 : jump;
        }
        utt.labels[static_cast<std::size_t>(t)] = static_cast<std::int32_t>(cls);
        const std::vector<double>& proto =
            out.prototypes[static_cast<std::size_t>(cls)];
        for (Index d = 0; d < D; ++d) {
          const double v = spk.gain[static_cast<std::size_t>(d)] *
                               proto[static_cast<std::size_t>(d)] +
                           spk.offset[static_cast<std::size_t>(d)] +
                           spec.noise * rng.normal();
          utt.frames.at(t, d) = to_f32(v);
        }
      }
      ds->utterances.push_back(std::move(utt));
    }
  }
  return out;
}

// ---- Container I/O ------------------------------------------------------------

namespace {

void put_u32(std::string* out, std::uint32_t v) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>((v >> 8) & 0xff));
  out->push_back(static_cast<char>((v >> 16) & 0xff));
  out->push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& blob, std::size_t idx) {
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + 4 * idx;
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t f32_bits(float f) {
  std::uint32_t u;
  static_assert(sizeof(f) == sizeof(u));
  std::memcpy(&u, &f, sizeof(u));
  return u;
}

float bits_f32(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof(f));
  return f;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "dln-dataset";
  manifest["version"] = 1;
  manifest["frame_dim"] = ds.frame_dim;
  manifest["num_classes"] = ds.num_classes;
  json utts = json::array();
  std::string frames_blob, labels_blob;
  Index frame_off = 0, label_off = 0;
  for (const Utterance& u : ds.utterances) {
    if (u.frames.rank() != 2 || u.frames.cols() != ds.frame_dim)
      fail("save_dataset: utterance " + u.utterance_id +
           " frame shape does not match dataset frame_dim");
    if (static_cast<Index>(u.labels.size()) != u.frames.rows())
      fail("save_dataset: utterance " + u.utterance_id +
           " label count does not match frame count");
    json ju;
    ju["id"] = u.utterance_id;
    ju["speaker"] = u.speaker_id;
    ju["num_frames"] = u.frames.rows();
    ju["frames_offset"] = frame_off;
    ju["labels_offset"] = label_off;
    utts.push_back(std::move(ju));
    for (Index i = 0; i < u.frames.size(); ++i)
      put_u32(&frames_blob, f32_bits(static_cast<float>(u.frames[i])));
    for (std::int32_t lab : u.labels)
      put_u32(&labels_blob, static_cast<std::uint32_t>(lab));
    frame_off += u.frames.size();
    label_off += static_cast<Index>(u.labels.size());
  }
  manifest["utterances"] = std::move(utts);
  write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
  write_file(fs::path(dir) / "frames.f32", frames_blob);
  write_file(fs::path(dir) / "labels.i32", labels_blob);
}

Dataset load_dataset(const std::string& dir) {
  const std::string text = read_file(fs::path(dir) / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    fail("load_dataset: malformed manifest in " + dir + ": " + e.what());
  }
  Dataset ds;
  std::string frames_blob = read_file(fs::path(dir) / "frames.f32");
  std::string labels_blob = read_file(fs::path(dir) / "labels.i32");
  if (frames_blob.size() % 4 != 0 || labels_blob.size() % 4 != 0)
    fail("load_dataset: corrupt container in " + dir +
         ": blob size is not a multiple of 4");
  const Index num_floats = static_cast<Index>(frames_blob.size() / 4);
  const Index num_labels = static_cast<Index>(labels_blob.size() / 4);
  try {
    if (manifest.at("format").get<std::string>() != "dln-dataset")
      fail("load_dataset: " + dir + " is not a dataset container");
    ds.frame_dim = manifest.at("frame_dim").get<Index>();
    ds.num_classes = manifest.at("num_classes").get<Index>();
    if (ds.frame_dim < 1 || ds.num_classes < 1)
      fail("load_dataset: malformed manifest in " + dir +
           ": non-positive frame_dim or num_classes");
    for (const json& ju : manifest.at("utterances")) {
      Utterance u;
      u.utterance_id = ju.at("id").get<std::string>();
      u.speaker_id = ju.at("speaker").get<std::string>();
      const Index t = ju.at("num_frames").get<Index>();
      const Index foff = ju.at("frames_offset").get<Index>();
      const Index loff = ju.at("labels_offset").get<Index>();
      if (t < 1)
        fail("load_dataset: utterance " + u.utterance_id + " has no frames");
      if (foff < 0 || loff < 0 || foff + t * ds.frame_dim > num_floats ||
          loff + t > num_labels)
        fail("load_dataset: corrupt container in " + dir + ": utterance " +
             u.utterance_id + " points outside the data blobs (truncated?)");
      u.frames = Array(Shape{t, ds.frame_dim});
      for (Index i = 0; i < t * ds.frame_dim; ++i)
        u.frames[i] = static_cast<double>(bits_f32(
            get_u32(frames_blob, static_cast<std::size_t>(foff + i))));
      if (!u.frames.all_finite())
        fail("load_dataset: non-finite feature values in " + u.utterance_id);
      u.labels.resize(static_cast<std::size_t>(t));
      for (Index i = 0; i < t; ++i) {
        const auto lab = static_cast<std::int32_t>(
            get_u32(labels_blob, static_cast<std::size_t>(loff + i)));
        if (lab < 0 || lab >= ds.num_classes)
          fail("load_dataset: label " + std::to_string(lab) + " in " +
               u.utterance_id + " is outside [0, " +
               std::to_string(ds.num_classes) + ")");
        u.labels[static_cast<std::size_t>(i)] = lab;
      }
      ds.utterances.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    fail("load_dataset: malformed manifest in " + dir + ": " + e.what());
  }
  return ds;
}

// ---- Summary export -------------------------------------------------------------

std::vector<SummaryRecord> export_summaries(const Model& model,
                                            const Dataset& ds,
                                            const std::vector<Index>& layers) {
  const StackConfig& cfg = model.cfg;
  if (!cfg.dln)
    fail("export_summaries: model was not trained with dynamic layer "
         "normalization; it has no summary vectors");
  if (ds.frame_dim != cfg.input_dim)
    fail("export_summaries: dataset frame_dim " + std::to_string(ds.frame_dim) +
         " does not match model input_dim " + std::to_string(cfg.input_dim));
  for (Index l : layers)
    if (l < 1 || l > cfg.num_layers)
      fail("export_summaries: layer " + std::to_string(l) +
           " is out of range [1, " + std::to_string(cfg.num_layers) + "]");

  std::vector<SummaryRecord> records;
  for (const Utterance& utt : ds.utterances) {
    Graph g;
    BoundModel bm = bind_model(&g, model, /*requires_grad=*/false);
    std::vector<std::uint8_t> mask(
        static_cast<std::size_t>(utt.frames.rows()), 1);
    ForwardResult fr = stack_forward(&g, bm, utt.frames, mask);
    for (Index l : layers) {
      for (int dir = 0; dir < 2; ++dir) {
        const Array& a =
            fr.summaries[static_cast<std::size_t>(l - 1)]
                        [static_cast<std::size_t>(dir)].value();
        SummaryRecord rec;
        rec.utterance_id = utt.utterance_id;
        rec.speaker_id = utt.speaker_id;
        rec.layer = l;
        rec.direction = dir == 0 ? "fwd" : "bwd";
        rec.values.assign(a.data(), a.data() + a.size());
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

void write_summaries_csv(const std::vector<SummaryRecord>& records,
                         const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open " + path + " for writing");
  for (const SummaryRecord& r : records) {
    out << r.utterance_id << ',' << r.speaker_id << ',' << r.layer << ','
        << r.direction;
    char buf[40];
    for (double v : r.values) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) fail("failed writing " + path);
}

// ---- Cluster purity ---------------------------------------------------------------

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

double cluster_purity(const std::vector<SummaryRecord>& records, Index k,
                      std::uint64_t seed) {
  const std::size_t n = records.size();
  if (n == 0) fail("cluster_purity: no records");
  if (k < 1) fail("cluster_purity: k must be >= 1");
  if (static_cast<std::size_t>(k) > n)
    fail("cluster_purity: k = " + std::to_string(k) + " exceeds record count " +
         std::to_string(n));
  const std::size_t dim = records[0].values.size();
  for (const SummaryRecord& r : records)
    if (r.values.size() != dim)
      fail("cluster_purity: records have inconsistent vector lengths");

  Rng rng(seed);
  // k-means++ seeding: first centroid uniform, the rest proportional to the
  // squared distance from the nearest chosen centroid.
  std::vector<std::vector<double>> centroids;
  centroids.push_back(records[rng.uniform_int(n)].values);
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids)
        best = std::min(best, sq_dist(records[i].values, c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.uniform_int(n);
    } else {
      const double threshold = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= threshold) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(records[pick].values);
  }

  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(records[i].values, centroids[0]);
      for (std::size_t c = 1; c < centroids.size(); ++c) {
        const double d = sq_dist(records[i].values, centroids[c]);
        if (d < best_d) {  // ties keep the lowest cluster index
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      std::vector<double> mean(dim, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == c) {
          for (std::size_t j = 0; j < dim; ++j) mean[j] += records[i].values[j];
          ++count;
        }
      if (count == 0) continue;  // empty cluster keeps its old centroid
      for (double& v : mean) v /= static_cast<double>(count);
      centroids[c] = std::move(mean);
    }
  }

  double pure = 0.0;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    std::map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i)
      if (assign[i] == c) ++counts[records[i].speaker_id];
    std::size_t best = 0;
    for (const auto& [speaker, count] : counts) best = std::max(best, count);
    pure += static_cast<double>(best);
  }
  return pure / static_cast<double>(n);
}

}  // namespace dln
