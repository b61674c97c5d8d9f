// train_test.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dln/adapt.h"
#include "dln/train.h"

using namespace dln;

namespace {

StackConfig tiny_static() {
  StackConfig cfg;
  cfg.num_layers = 1;
  cfg.cell_size = 4;
  cfg.proj_size = 2;
  cfg.input_dim = 2;
  cfg.num_classes = 2;
  return cfg;
}

// Class = sign of the first feature; separable, so a small model can learn it.
Dataset toy_dataset(Index num_utts, Index frames_per_utt, std::uint64_t seed) {
  Dataset ds;
  ds.frame_dim = 2;
  ds.num_classes = 2;
  Rng rng(seed);
  for (Index u = 0; u < num_utts; ++u) {
    Utterance utt;
    utt.utterance_id = "u" + std::to_string(u);
    utt.speaker_id = "spk" + std::to_string(u % 2);
    utt.frames = Array(Shape{frames_per_utt, 2});
    for (Index t = 0; t < frames_per_utt; ++t) {
      double x0 = rng.uniform() < 0.5 ? -1.0 : 1.0;
      utt.frames.at(t, 0) = x0 + 0.1 * rng.normal();
      utt.frames.at(t, 1) = rng.normal();
      utt.labels.push_back(x0 > 0.0 ? 1 : 0);
    }
    ds.utterances.push_back(std::move(utt));
  }
  return ds;
}

double frobenius_off_identity(const Array& gram) {
  double acc = 0.0;
  for (Index i = 0; i < gram.rows(); ++i)
    for (Index j = 0; j < gram.cols(); ++j) {
      double want = i == j ? 1.0 : 0.0;
      acc += (gram.at(i, j) - want) * (gram.at(i, j) - want);
    }
  return std::sqrt(acc);
}

Array gram_rows(const Array& m) {  // M M^T
  Array g(Shape{m.rows(), m.rows()});
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.rows(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < m.cols(); ++k) acc += m.at(i, k) * m.at(j, k);
      g.at(i, j) = acc;
    }
  return g;
}

Array gram_cols(const Array& m) {  // M^T M
  Array g(Shape{m.cols(), m.cols()});
  for (Index i = 0; i < m.cols(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < m.rows(); ++k) acc += m.at(k, i) * m.at(k, j);
      g.at(i, j) = acc;
    }
  return g;
}

}  // namespace

TEST_CASE("uniform logits cost ln(num_classes)") {
  Graph g;
  Tensor logits = g.constant(Array(Shape{1, 4}, 0.0));
  double loss = softmax_nll(logits, {2}, {1}).value().scalar_value();
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("a saturated correct logit costs nearly nothing") {
  Graph g;
  Tensor logits = g.constant(Array::mat(1, 3, {50.0, 0.0, 0.0}));
  double loss = softmax_nll(logits, {0}, {1}).value().scalar_value();
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-8);
}

TEST_CASE("two-frame loss matches a scalar reference") {
  Array lv = Array::mat(2, 3, {1.0, 2.0, 3.0, 0.5, -0.5, 0.0});
  std::vector<std::int32_t> targets = {2, 0};
  Graph g;
  double loss =
      softmax_nll(g.constant(lv), targets, {1, 1}).value().scalar_value();
  double want = 0.0;
  for (Index t = 0; t < 2; ++t) {
    double lse = 0.0;
    for (Index j = 0; j < 3; ++j) lse += std::exp(lv.at(t, j));
    want += std::log(lse) - lv.at(t, targets[static_cast<std::size_t>(t)]);
  }
  want /= 2.0;
  CHECK(std::abs(loss - want) < 1e-12);
}

TEST_CASE("masked frames do not contribute to the loss") {
  Array base = Array::mat(2, 3, {1.0, 2.0, 3.0, 0.5, -0.5, 0.0});
  Array padded = Array::mat(3, 3, {1.0, 2.0, 3.0, 0.5, -0.5, 0.0, 9.0, -9.0, 4.0});
  Graph g1, g2;
  double l1 = softmax_nll(g1.constant(base), {2, 0}, {1, 1})
                  .value().scalar_value();
  double l2 = softmax_nll(g2.constant(padded), {2, 0, 1}, {1, 1, 0})
                  .value().scalar_value();
  CHECK(l1 == l2);
}

TEST_CASE("loss input validation") {
  Graph g;
  Tensor logits = g.constant(Array(Shape{2, 3}, 0.0));
  CHECK_THROWS_AS(softmax_nll(logits, {0, 3}, {1, 1}), Error);   // target range
  CHECK_THROWS_AS(softmax_nll(logits, {0, -1}, {1, 1}), Error);  // negative
  CHECK_THROWS_AS(softmax_nll(logits, {0, 0}, {0, 0}), Error);   // all masked
  CHECK_THROWS_AS(softmax_nll(logits, {0}, {1, 1}), Error);      // length
}

TEST_CASE("loss gradient is (softmax - onehot) / valid count") {
  Array lv = Array::mat(3, 3, {1.0, 2.0, 3.0, 0.5, -0.5, 0.0, 7.0, 7.0, 7.0});
  std::vector<std::int32_t> targets = {2, 0, 1};
  std::vector<std::uint8_t> mask = {1, 1, 0};
  Graph g;
  Tensor logits = g.leaf(lv);
  g.backward(softmax_nll(logits, targets, mask));
  const Array& gl = g.grad(logits);
  for (Index t = 0; t < 2; ++t) {
    double lse = 0.0;
    for (Index j = 0; j < 3; ++j) lse += std::exp(lv.at(t, j));
    for (Index j = 0; j < 3; ++j) {
      double p = std::exp(lv.at(t, j)) / lse;
      double onehot = j == targets[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
      CHECK(std::abs(gl.at(t, j) - (p - onehot) / 2.0) < 1e-12);
    }
  }
  for (Index j = 0; j < 3; ++j) CHECK(gl.at(2, j) == 0.0);  // masked row
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(1);
  Array lv(Shape{4, 5});
  for (Index i = 0; i < lv.size(); ++i) lv[i] = rng.normal();
  std::vector<Array> params = {lv};
  std::vector<std::int32_t> targets = {4, 0, 2, 2};
  std::vector<std::uint8_t> mask = {1, 1, 1, 0};
  auto loss_fn = [&](Graph* g, const std::vector<Tensor>& p) {
    (void)g;
    return softmax_nll(p[0], targets, mask);
  };
  GradCheckReport rep = grad_check(loss_fn, &params, {"logits"}, 1e-5);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("adam ignores parameters whose gradient is zero") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  init_model(&m, 1);
  Model before = m;
  AdamState state = make_adam_state(cfg);
  std::vector<Array> grads;
  for_each_param_shape(cfg, [&](const std::string&, const Shape& s) {
    grads.push_back(Array(s, 0.0));
  });
  adam_step(&m, grads, &state, AdamConfig());
  CHECK(state.t == 1);
  std::vector<const Array*> now, was;
  for_each_param(m, [&](const std::string&, const Array& a) { now.push_back(&a); });
  for_each_param(before, [&](const std::string&, const Array& a) { was.push_back(&a); });
  for (std::size_t k = 0; k < now.size(); ++k)
    for (Index i = 0; i < now[k]->size(); ++i)
      CHECK((*now[k])[i] == (*was[k])[i]);
}

TEST_CASE("the first adam step moves against the gradient sign") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  init_model(&m, 2);
  Model before = m;
  AdamState state = make_adam_state(cfg);
  Rng rng(3);
  std::vector<Array> grads;
  for_each_param_shape(cfg, [&](const std::string&, const Shape& s) {
    Array g(s);
    for (Index i = 0; i < g.size(); ++i)
      g[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 2.0);
    grads.push_back(g);
  });
  AdamConfig ac;
  adam_step(&m, grads, &state, ac);
  std::vector<const Array*> now, was;
  for_each_param(m, [&](const std::string&, const Array& a) { now.push_back(&a); });
  for_each_param(before, [&](const std::string&, const Array& a) { was.push_back(&a); });
  for (std::size_t k = 0; k < now.size(); ++k)
    for (Index i = 0; i < now[k]->size(); ++i) {
      double delta = (*now[k])[i] - (*was[k])[i];
      double sign = grads[k][i] > 0.0 ? 1.0 : -1.0;
      CHECK(std::abs(delta + ac.lr * sign) < 1e-6);
    }
}

TEST_CASE("three adam steps match a scalar oracle") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);  // zeros; we drive a single coordinate
  m.output.b_y[0] = 1.0;
  AdamState state = make_adam_state(cfg);
  AdamConfig ac;

  // Oracle for d/dtheta (theta^2 / 2) = theta, in plain doubles.
  double theta = 1.0, om = 0.0, ov = 0.0;
  for (int step = 1; step <= 3; ++step) {
    std::vector<Array> grads;
    std::size_t by_index = 0, k = 0;
    for_each_param_shape(cfg, [&](const std::string& name, const Shape& s) {
      grads.push_back(Array(s, 0.0));
      if (name.find("b_y") != std::string::npos) by_index = k;
      ++k;
    });
    grads[by_index][0] = m.output.b_y[0];
    adam_step(&m, grads, &state, ac);

    double grad = theta;
    om = ac.beta1 * om + (1.0 - ac.beta1) * grad;
    ov = ac.beta2 * ov + (1.0 - ac.beta2) * grad * grad;
    double mhat = om / (1.0 - std::pow(ac.beta1, step));
    double vhat = ov / (1.0 - std::pow(ac.beta2, step));
    theta -= ac.lr * mhat / (std::sqrt(vhat) + ac.eps);
    CHECK(std::abs(m.output.b_y[0] - theta) < 1e-12);
  }
  CHECK(state.t == 3);
}

TEST_CASE("adam rejects malformed gradients") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  AdamState state = make_adam_state(cfg);
  std::vector<Array> grads;
  for_each_param_shape(cfg, [&](const std::string&, const Shape& s) {
    grads.push_back(Array(s, 0.0));
  });
  grads[0][0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(&m, grads, &state, AdamConfig()), Error);

  std::vector<Array> short_grads(grads.begin(), grads.end() - 1);
  CHECK_THROWS_AS(adam_step(&m, short_grads, &state, AdamConfig()), Error);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  std::vector<Array> grads = {Array::vec({3.0}), Array::vec({4.0})};
  clip_gradients(&grads, 1.0);  // norm was 5
  CHECK(grads[0][0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(grads[1][0] == doctest::Approx(0.8).epsilon(1e-12));

  grads = {Array::vec({3.0}), Array::vec({4.0})};
  clip_gradients(&grads, 10.0);  // under the limit: untouched
  CHECK(grads[0][0] == 3.0);
  grads = {Array::vec({3.0}), Array::vec({4.0})};
  clip_gradients(&grads, 0.0);  // disabled
  CHECK(grads[1][0] == 4.0);
}

TEST_CASE("orthogonal_init produces orthonormal rows or columns") {
  Rng rng(4);
  Array sq = orthogonal_init(4, 4, &rng);
  CHECK(frobenius_off_identity(gram_rows(sq)) < 1e-10);

  Array wide = orthogonal_init(2, 5, &rng);
  CHECK(frobenius_off_identity(gram_rows(wide)) < 1e-10);

  Array tall = orthogonal_init(5, 2, &rng);
  CHECK(frobenius_off_identity(gram_cols(tall)) < 1e-10);
}

TEST_CASE("orthogonal_init is seed-deterministic") {
  Rng r1(5), r2(5), r3(6);
  Array a = orthogonal_init(3, 7, &r1);
  Array b = orthogonal_init(3, 7, &r2);
  Array c = orthogonal_init(3, 7, &r3);
  for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  bool any_diff = false;
  for (Index i = 0; i < a.size(); ++i) any_diff |= a[i] != c[i];
  CHECK(any_diff);
}

TEST_CASE("init_model fills scales with one, shifts with zero, weights orthogonal") {
  StackConfig cfg = tiny_static();
  cfg.dln = true;
  cfg.summary_size = 2;
  Model m = build_model(cfg);
  init_model(&m, 7);
  for_each_param(m, [&](const std::string& name, const Array& a) {
    if (a.rank() == 1) {
      double want = name.find("scale") != std::string::npos ? 1.0 : 0.0;
      for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == want);
    }
  });
  // Spot-check both orientations.
  CHECK(frobenius_off_identity(gram_rows(m.layers[0].fwd.W_p)) < 1e-10);
  CHECK(frobenius_off_identity(gram_cols(m.layers[0].fwd.W[0])) < 1e-10);

  Model m2 = build_model(cfg);
  init_model(&m2, 7);
  std::vector<const Array*> a1, a2;
  for_each_param(m, [&](const std::string&, const Array& a) { a1.push_back(&a); });
  for_each_param(m2, [&](const std::string&, const Array& a) { a2.push_back(&a); });
  for (std::size_t k = 0; k < a1.size(); ++k)
    for (Index i = 0; i < a1[k]->size(); ++i)
      CHECK((*a1[k])[i] == (*a2[k])[i]);
}

TEST_CASE("pad_to extends with zeros behind the mask") {
  Utterance utt;
  utt.utterance_id = "u";
  utt.speaker_id = "s";
  utt.frames = Array::mat(2, 3, {1, 2, 3, 4, 5, 6});
  utt.labels = {1, 0};
  PaddedUtterance p = pad_to(utt, 4);
  REQUIRE(p.frames.rows() == 4);
  CHECK(p.frames.at(1, 2) == 6.0);
  CHECK(p.frames.at(2, 0) == 0.0);
  CHECK(p.frames.at(3, 2) == 0.0);
  REQUIRE(p.labels.size() == 4);
  CHECK(p.labels[1] == 0);
  CHECK(p.labels[2] == 0);
  CHECK(p.mask == std::vector<std::uint8_t>({1, 1, 0, 0}));
  CHECK_THROWS_AS(pad_to(utt, 1), Error);
}

TEST_CASE("make_batches covers the dataset and buckets by length") {
  Dataset ds;
  ds.frame_dim = 1;
  ds.num_classes = 2;
  std::vector<Index> lengths = {10, 1, 10, 1, 10, 1};
  for (std::size_t u = 0; u < lengths.size(); ++u) {
    Utterance utt;
    utt.utterance_id = "u" + std::to_string(u);
    utt.speaker_id = "s";
    utt.frames = Array(Shape{lengths[u], 1}, 0.5);
    utt.labels.assign(static_cast<std::size_t>(lengths[u]), 0);
    ds.utterances.push_back(std::move(utt));
  }
  Rng rng(8);
  auto batches = make_batches(ds, 3, &rng);
  REQUIRE(batches.size() == 2);
  std::vector<bool> seen(6, false);
  for (const auto& batch : batches) {
    CHECK(batch.size() <= 3);
    Index len = ds.utterances[static_cast<std::size_t>(batch[0])].frames.rows();
    for (Index u : batch) {
      CHECK(!seen[static_cast<std::size_t>(u)]);
      seen[static_cast<std::size_t>(u)] = true;
      // Bucketing keeps equal lengths together here.
      CHECK(ds.utterances[static_cast<std::size_t>(u)].frames.rows() == len);
    }
  }
  for (bool s : seen) CHECK(s);

  Rng rng_a(9), rng_b(9);
  CHECK(make_batches(ds, 3, &rng_a) == make_batches(ds, 3, &rng_b));
}

TEST_CASE("frame_errors counts mismatches with lowest-index tie-break") {
  // Perfect predictions.
  Array good = Array::mat(2, 3, {9, 0, 0, 0, 9, 0});
  CHECK(frame_errors(good, {0, 1}, {1, 1}) == 0);

  // All-zero logits pick class 0; every target-1 frame is an error.
  Array zeros(Shape{4, 2}, 0.0);
  CHECK(frame_errors(zeros, {1, 1, 1, 1}, {1, 1, 1, 1}) == 4);

  // Ten frames, three wrong.
  Array ten(Shape{10, 3}, 0.0);
  std::vector<std::int32_t> targets(10, 2);
  for (Index t = 0; t < 10; ++t) ten.at(t, 2) = 1.0;
  ten.at(1, 0) = 5.0;
  ten.at(5, 1) = 5.0;
  ten.at(8, 0) = 5.0;
  CHECK(frame_errors(ten, targets, std::vector<std::uint8_t>(10, 1)) == 3);

  // Masked frames never count.
  CHECK(frame_errors(zeros, {1, 1, 1, 1}, {0, 0, 1, 0}) == 1);
}

TEST_CASE("frame_error_rate of the zero model is the non-zero label mass") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);  // every logit 0 -> predicts class 0
  Dataset ds;
  ds.frame_dim = cfg.input_dim;
  ds.num_classes = 2;
  Utterance utt;
  utt.utterance_id = "u";
  utt.speaker_id = "s";
  utt.frames = Array(Shape{4, cfg.input_dim}, 0.25);
  utt.labels = {0, 1, 1, 0};
  ds.utterances.push_back(utt);
  CHECK(frame_error_rate(m, ds) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("training reduces the loss on a learnable task") {
  Dataset train = toy_dataset(12, 8, 21);
  Dataset dev = toy_dataset(4, 8, 22);
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  init_model(&m, 1);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 8;
  tc.seed = 5;
  FitResult res = fit(m, train, dev, tc, nullptr);
  REQUIRE(res.epochs.size() == 8);
  CHECK(res.epochs.back().mean_loss < res.epochs.front().mean_loss);
  CHECK(res.best_epoch >= 1);
  CHECK(res.best_epoch <= 8);
  CHECK(res.best.cfg.lambda == tc.lambda);
}

TEST_CASE("a single utterance is overfit quickly") {
  Dataset train = toy_dataset(1, 10, 31);
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  init_model(&m, 2);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.epochs = 40;
  tc.seed = 6;
  FitResult res = fit(m, train, train, tc, nullptr);
  CHECK(res.epochs.back().mean_loss < res.epochs.front().mean_loss);
  CHECK(res.epochs.back().mean_loss < std::log(2.0));  // beats the uniform guess
}

TEST_CASE("training is deterministic for a fixed seed") {
  Dataset train = toy_dataset(6, 6, 41);
  Dataset dev = toy_dataset(2, 6, 42);
  StackConfig cfg = tiny_static();
  cfg.dln = true;
  cfg.summary_size = 2;
  TrainConfig tc;
  tc.batch_size = 2;
  tc.epochs = 2;
  tc.seed = 7;
  tc.lambda = 1.0;

  std::vector<Array> runs[2];
  for (int r = 0; r < 2; ++r) {
    Model m = build_model(cfg);
    init_model(&m, 3);
    FitResult res = fit(m, train, dev, tc, nullptr);
    for_each_param(res.best, [&](const std::string&, const Array& a) {
      runs[r].push_back(a);
    });
  }
  REQUIRE(runs[0].size() == runs[1].size());
  for (std::size_t k = 0; k < runs[0].size(); ++k)
    for (Index i = 0; i < runs[0][k].size(); ++i)
      CHECK(runs[0][k][i] == runs[1][k][i]);
}

TEST_CASE("zero epochs returns the initialization untouched") {
  Dataset train = toy_dataset(2, 5, 51);
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  init_model(&m, 4);
  TrainConfig tc;
  tc.epochs = 0;
  FitResult res = fit(m, train, train, tc, nullptr);
  CHECK(res.best_epoch == 0);
  CHECK(res.epochs.empty());
  std::vector<const Array*> a1, a2;
  for_each_param(m, [&](const std::string&, const Array& a) { a1.push_back(&a); });
  for_each_param(res.best, [&](const std::string&, const Array& a) { a2.push_back(&a); });
  for (std::size_t k = 0; k < a1.size(); ++k)
    for (Index i = 0; i < a1[k]->size(); ++i)
      CHECK((*a1[k])[i] == (*a2[k])[i]);
}

TEST_CASE("non-finite values abort the epoch with a diagnostic") {
  Dataset train = toy_dataset(2, 5, 61);
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  init_model(&m, 5);
  m.output.b_y[0] = std::numeric_limits<double>::infinity();
  AdamState state = make_adam_state(cfg);
  TrainConfig tc;
  try {
    train_epoch(&m, train, tc, 1, &state);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("aborted") != std::string::npos);
  }
}

TEST_CASE("dataset/model dimension mismatches are rejected") {
  Dataset train = toy_dataset(2, 5, 71);
  StackConfig cfg = tiny_static();
  cfg.input_dim = 3;  // dataset has 2
  Model m = build_model(cfg);
  AdamState state = make_adam_state(cfg);
  TrainConfig tc;
  CHECK_THROWS_AS(train_epoch(&m, train, tc, 1, &state), Error);
  CHECK_THROWS_AS(frame_error_rate(m, train), Error);
}

TEST_CASE("full-stack gradients with penalty match finite differences") {
  StackConfig cfg;
  cfg.num_layers = 1;
  cfg.cell_size = 4;
  cfg.proj_size = 2;
  cfg.input_dim = 3;
  cfg.num_classes = 3;
  cfg.dln = true;
  cfg.summary_size = 2;
  cfg.lambda = 10.0;
  Model m = build_model(cfg);
  init_model(&m, 8);
  Rng rng(9);
  // Perturb so no structural symmetry hides a wrong gradient.
  for_each_param(&m, [&](const std::string&, Array* a) {
    for (Index i = 0; i < a->size(); ++i) (*a)[i] += 0.1 * rng.normal();
  });

  const Index t_max = 3;
  std::vector<Array> frames(2);
  std::vector<std::vector<std::int32_t>> targets(2);
  std::vector<std::vector<std::uint8_t>> masks = {{1, 1, 1}, {1, 1, 0}};
  for (int u = 0; u < 2; ++u) {
    frames[static_cast<std::size_t>(u)] = Array(Shape{t_max, cfg.input_dim});
    for (Index i = 0; i < frames[static_cast<std::size_t>(u)].size(); ++i)
      frames[static_cast<std::size_t>(u)][i] = rng.normal();
    for (Index t = 0; t < t_max; ++t)
      targets[static_cast<std::size_t>(u)].push_back(
          static_cast<std::int32_t>(rng.uniform_int(3)));
  }
  std::vector<Array> params;
  std::vector<std::string> names;
  for_each_param(m, [&](const std::string& name, const Array& a) {
    params.push_back(a);
    names.push_back(name);
  });
  auto loss_fn = [&](Graph* g, const std::vector<Tensor>& leaves) {
    BoundModel bm = bind_model_leaves(g, cfg, leaves);
    std::vector<std::array<std::vector<Tensor>, 2>> sums(
        static_cast<std::size_t>(cfg.num_layers));
    Tensor total;
    for (std::size_t u = 0; u < 2; ++u) {
      ForwardResult fr = stack_forward(g, bm, frames[u], masks[u]);
      Tensor nll = softmax_nll(fr.logits, targets[u], masks[u]);
      total = u == 0 ? nll : add(total, nll);
      for (std::size_t l = 0; l < fr.summaries.size(); ++l) {
        sums[l][0].push_back(fr.summaries[l][0]);
        sums[l][1].push_back(fr.summaries[l][1]);
      }
    }
    Tensor mean_nll = scale(total, 0.5);
    return add(mean_nll,
               variance_penalty(g, sums, cfg.lambda, cfg.summary_size));
  };
  GradCheckReport rep = grad_check(loss_fn, &params, names, 1e-5);
  INFO("worst: ", rep.worst_param, "[", rep.worst_index, "]");
  CHECK(rep.max_rel_error < 1e-4);
}
