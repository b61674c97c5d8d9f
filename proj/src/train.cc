// train.cc

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

#include "dln/train.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include "dln/adapt.h"

namespace dln {

using internal::Node;

Tensor softmax_nll(const Tensor& logits,
                   const std::vector<std::int32_t>& targets,
                   const std::vector<std::uint8_t>& mask) {
  Graph* g = OpAccess::common_graph({logits}, "softmax_nll");
  const Array& lv = logits.value();
  if (lv.rank() != 2) fail("softmax_nll: logits must be [T x C]");
  const Index t_max = lv.rows();
  const Index c = lv.cols();
  if (static_cast<Index>(targets.size()) != t_max ||
      static_cast<Index>(mask.size()) != t_max)
    fail("softmax_nll: targets/mask length does not match logit rows");

  Index n_valid = 0;
  for (std::uint8_t m : mask) n_valid += m ? 1 : 0;
  if (n_valid == 0) fail("softmax_nll: all frames are masked");

  // Softmax rows are cached for the backward pass (masked rows stay zero).
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(t_max * c), 0.0);
  double loss = 0.0;
  for (Index t = 0; t < t_max; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const std::int32_t tgt = targets[static_cast<std::size_t>(t)];
    if (tgt < 0 || tgt >= c)
      fail("softmax_nll: target " + std::to_string(tgt) + " at frame " +
           std::to_string(t) + " is outside [0, " + std::to_string(c) + ")");
    const double* l = lv.data() + t * c;
    double m = l[0];
    for (Index j = 1; j < c; ++j) m = std::max(m, l[j]);
    double denom = 0.0;
    for (Index j = 0; j < c; ++j) denom += std::exp(l[j] - m);
    double* p = probs->data() + t * c;
    for (Index j = 0; j < c; ++j) p[j] = std::exp(l[j] - m) / denom;
    loss += std::log(denom) + m - l[tgt];
  }
  loss /= static_cast<double>(n_valid);
  if (!std::isfinite(loss)) fail("softmax_nll: non-finite loss");

  const bool rg = logits.requires_grad();
  Node* out = OpAccess::alloc(g, Array::scalar(loss), rg, "softmax_nll");
  if (rg) {
    Node* ln = OpAccess::node(logits);
    const std::vector<std::int32_t> tgts = targets;  // keep alive for backward
    const std::vector<std::uint8_t> msk = mask;
    out->backprop = [ln, out, probs, tgts, msk, t_max, c, n_valid]() {
      const double gy = out->grad[0];
      const double inv = gy / static_cast<double>(n_valid);
      double* dl = ln->grad_slot();
      for (Index t = 0; t < t_max; ++t) {
        if (!msk[static_cast<std::size_t>(t)]) continue;
        const double* p = probs->data() + t * c;
        double* row = dl + t * c;
        for (Index j = 0; j < c; ++j) row[j] += inv * p[j];
        row[tgts[static_cast<std::size_t>(t)]] -= inv;
      }
    };
  }
  return OpAccess::wrap(g, out);
}

// ---- Adam ---------------------------------------------------------------------

AdamState make_adam_state(const StackConfig& cfg) {
  AdamState st;
  for_each_param_shape(cfg, [&st](const std::string&, const Shape& shape) {
    st.m.emplace_back(shape);
    st.v.emplace_back(shape);
  });
  return st;
}

void adam_step(Model* model, const std::vector<Array>& grads, AdamState* state,
               const AdamConfig& cfg) {
  std::vector<std::pair<std::string, Array*>> params;
  for_each_param(model, [&params](const std::string& name, Array* a) {
    params.emplace_back(name, a);
  });
  if (grads.size() != params.size() || state->m.size() != params.size())
    fail("adam_step: gradient/state count does not match the model");

  state->t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state->t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state->t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Array* p = params[k].second;
    const Array& grad = grads[k];
    if (!grad.same_shape(*p))
      fail("adam_step: gradient shape mismatch for " + params[k].first);
    if (!grad.all_finite())
      fail("adam_step: non-finite gradient for " + params[k].first);
    Array& m = state->m[k];
    Array& v = state->v[k];
    for (Index i = 0; i < p->size(); ++i) {
      const double gi = grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      (*p)[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void clip_gradients(std::vector<Array>* grads, double clip) {
  if (clip <= 0.0) return;
  double sq = 0.0;
  for (const Array& gr : *grads)
    for (Index i = 0; i < gr.size(); ++i) sq += gr[i] * gr[i];
  const double norm = std::sqrt(sq);
  if (norm <= clip) return;
  const double s = clip / norm;
  for (Array& gr : *grads)
    for (Index i = 0; i < gr.size(); ++i) gr[i] *= s;
}

// ---- Initialization -------------------------------------------------------------

Array orthogonal_init(Index rows, Index cols, Rng* rng) {
  if (rows < 1 || cols < 1) fail("orthogonal_init: extents must be positive");
  const bool by_rows = rows <= cols;  // orthonormalize the smaller side
  const Index n = by_rows ? rows : cols;
  const Index len = by_rows ? cols : rows;

  std::vector<std::vector<double>> v(static_cast<std::size_t>(n),
                                     std::vector<double>(
                                         static_cast<std::size_t>(len)));
  for (auto& vi : v)
    for (double& x : vi) x = rng->normal();

  // Modified Gram-Schmidt, applied twice for orthogonality to full precision.
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (Index k = 0; k < len; ++k)
          dot += v[i][static_cast<std::size_t>(k)] *
                 v[j][static_cast<std::size_t>(k)];
        for (Index k = 0; k < len; ++k)
          v[i][static_cast<std::size_t>(k)] -=
              dot * v[j][static_cast<std::size_t>(k)];
      }
    }
    double norm = 0.0;
    for (Index k = 0; k < len; ++k) {
      const double x = v[i][static_cast<std::size_t>(k)];
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12)
      fail("orthogonal_init: degenerate Gaussian draw");  // probability ~0
    for (Index k = 0; k < len; ++k) v[i][static_cast<std::size_t>(k)] /= norm;
  }

  Array out(Shape{rows, cols});
  for (Index r = 0; r < rows; ++r)
    for (Index cidx = 0; cidx < cols; ++cidx)
      out.at(r, cidx) = by_rows ? v[static_cast<std::size_t>(r)]
                                   [static_cast<std::size_t>(cidx)]
                                : v[static_cast<std::size_t>(cidx)]
                                   [static_cast<std::size_t>(r)];
  return out;
}

void init_model(Model* model, std::uint64_t seed) {
  Rng rng(seed);
  for_each_param(model, [&rng](const std::string& name, Array* a) {
    if (a->rank() == 2) {
      *a = orthogonal_init(a->rows(), a->cols(), &rng);
    } else {
      // Vector parameters: LN scales and generated-scale biases start at 1
      // (so normalization starts near identity); shifts and other biases at 0.
      const double fill = name.find("scale") != std::string::npos ? 1.0 : 0.0;
      for (Index i = 0; i < a->size(); ++i) (*a)[i] = fill;
    }
  });
}

// ---- Batching -------------------------------------------------------------------

PaddedUtterance pad_to(const Utterance& utt, Index t_max) {
  const Index t = utt.frames.rows();
  if (t_max < t) fail("pad_to: utterance longer than the padded length");
  PaddedUtterance p;
  p.frames = Array(Shape{t_max, utt.frames.cols()});
  for (Index i = 0; i < utt.frames.size(); ++i) p.frames[i] = utt.frames[i];
  p.labels.assign(static_cast<std::size_t>(t_max), 0);
  std::copy(utt.labels.begin(), utt.labels.end(), p.labels.begin());
  p.mask.assign(static_cast<std::size_t>(t_max), 0);
  std::fill(p.mask.begin(), p.mask.begin() + t, 1);
  return p;
}

std::vector<std::vector<Index>> make_batches(const Dataset& ds,
                                             Index batch_size, Rng* rng) {
  if (batch_size < 1) fail("make_batches: batch_size must be >= 1");
  std::vector<Index> order(ds.utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<Index>(i);
  std::sort(order.begin(), order.end(), [&ds](Index a, Index b) {
    const Index la = ds.utterances[static_cast<std::size_t>(a)].frames.rows();
    const Index lb = ds.utterances[static_cast<std::size_t>(b)].frames.rows();
    return la != lb ? la < lb : a < b;
  });
  std::vector<std::vector<Index>> batches;
  for (std::size_t i = 0; i < order.size();
       i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  rng->shuffle(&batches);
  return batches;
}

// ---- Metrics --------------------------------------------------------------------

Index frame_errors(const Array& logits,
                   const std::vector<std::int32_t>& targets,
                   const std::vector<std::uint8_t>& mask) {
  const Index t_max = logits.rows();
  const Index c = logits.cols();
  Index errors = 0;
  for (Index t = 0; t < t_max; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const double* row = logits.data() + t * c;
    Index best = 0;
    for (Index j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;  // strict: ties keep the lower index
    if (best != targets[static_cast<std::size_t>(t)]) ++errors;
  }
  return errors;
}

namespace {

void check_compatible(const StackConfig& cfg, const Dataset& ds,
                      const char* who) {
  if (ds.frame_dim != cfg.input_dim)
    fail(std::string(who) + ": dataset frame_dim " +
         std::to_string(ds.frame_dim) + " does not match model input_dim " +
         std::to_string(cfg.input_dim));
  if (ds.num_classes != cfg.num_classes)
    fail(std::string(who) + ": dataset num_classes " +
         std::to_string(ds.num_classes) + " does not match model num_classes " +
         std::to_string(cfg.num_classes));
}

}  // namespace

double frame_error_rate(const Model& model, const Dataset& ds) {
  if (ds.utterances.empty()) fail("frame_error_rate: empty dataset");
  check_compatible(model.cfg, ds, "frame_error_rate");
  Index errors = 0, valid = 0;
  for (const Utterance& utt : ds.utterances) {
    Graph g;
    BoundModel bm = bind_model(&g, model, /*requires_grad=*/false);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(utt.frames.rows()),
                                   1);
    ForwardResult fr = stack_forward(&g, bm, utt.frames, mask);
    errors += frame_errors(fr.logits.value(), utt.labels, mask);
    valid += utt.frames.rows();
  }
  return 100.0 * static_cast<double>(errors) / static_cast<double>(valid);
}

// ---- Training loop --------------------------------------------------------------

EpochStats train_epoch(Model* model, const Dataset& train,
                       const TrainConfig& cfg, Index epoch, AdamState* adam) {
  if (train.utterances.empty()) fail("train_epoch: empty dataset");
  check_compatible(model->cfg, train, "train_epoch");

  // Batch composition gets its own per-epoch stream so epochs differ but the
  // whole schedule is a pure function of (seed, epoch).
  Rng shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ULL *
                                 static_cast<std::uint64_t>(epoch));
  const auto batches = make_batches(train, cfg.batch_size, &shuffle_rng);

  EpochStats stats;
  Index errors = 0, valid = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    try {
      const std::vector<Index>& batch = batches[b];
      Index t_max = 0;
      for (Index idx : batch)
        t_max = std::max(
            t_max, train.utterances[static_cast<std::size_t>(idx)].frames.rows());

      Graph g;
      std::vector<Tensor> leaves;
      for_each_param(*model, [&](const std::string&, const Array& a) {
        leaves.push_back(g.leaf(a, /*requires_grad=*/true));
      });
      BoundModel bm = bind_model_leaves(&g, model->cfg, leaves);

      std::vector<std::array<std::vector<Tensor>, 2>> summaries(
          static_cast<std::size_t>(model->cfg.num_layers));
      Tensor nll_sum;
      for (Index idx : batch) {
        const Utterance& utt = train.utterances[static_cast<std::size_t>(idx)];
        PaddedUtterance padded = pad_to(utt, t_max);
        ForwardResult fr = stack_forward(&g, bm, padded.frames, padded.mask);
        Tensor nll = softmax_nll(fr.logits, padded.labels, padded.mask);
        nll_sum = nll_sum.defined() ? add(nll_sum, nll) : nll;
        errors += frame_errors(fr.logits.value(), padded.labels, padded.mask);
        valid += utt.frames.rows();
        if (model->cfg.dln)
          for (int dir = 0; dir < 2; ++dir)
            for (Index l = 0; l < model->cfg.num_layers; ++l)
              summaries[static_cast<std::size_t>(l)]
                       [static_cast<std::size_t>(dir)]
                           .push_back(fr.summaries[static_cast<std::size_t>(l)]
                                                  [static_cast<std::size_t>(dir)]);
      }
      Tensor mean_nll = scale(nll_sum, 1.0 / static_cast<double>(batch.size()));
      Tensor penalty =
          model->cfg.dln
              ? variance_penalty(&g, summaries, cfg.lambda,
                                 model->cfg.summary_size)
              : g.constant(0.0);
      Tensor loss = add(mean_nll, penalty);

      stats.mean_loss += mean_nll.scalar_value();
      stats.mean_penalty += penalty.scalar_value();

      g.backward(loss);
      std::vector<Array> grads;
      grads.reserve(leaves.size());
      for (const Tensor& leaf : leaves) grads.push_back(g.grad(leaf));
      clip_gradients(&grads, cfg.grad_clip);
      adam_step(model, grads, adam, cfg.adam);
    } catch (const Error& e) {
      fail("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
           " aborted: " + e.what());
    }
  }
  stats.mean_loss /= static_cast<double>(batches.size());
  stats.mean_penalty /= static_cast<double>(batches.size());
  stats.train_fer =
      100.0 * static_cast<double>(errors) / static_cast<double>(valid);
  return stats;
}

FitResult fit(Model init, const Dataset& train, const Dataset& dev,
              const TrainConfig& cfg,
              const std::function<void(Index, const EpochStats&)>& on_epoch) {
  Model model = std::move(init);
  model.cfg.lambda = cfg.lambda;  // record the effective penalty weight
  AdamState adam = make_adam_state(model.cfg);

  FitResult res;
  res.best = model;
  res.best_epoch = 0;
  double best_fer = std::numeric_limits<double>::infinity();
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats s = train_epoch(&model, train, cfg, epoch, &adam);
    s.dev_fer = frame_error_rate(model, dev);
    res.epochs.push_back(s);
    if (s.dev_fer < best_fer) {
      best_fer = s.dev_fer;
      res.best = model;
      res.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, s);
  }
  return res;
}

}  // namespace dln
