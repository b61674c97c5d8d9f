// recurrent_test.cc

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
#include <set>
#include <vector>

#include "dln/recurrent.h"
#include "dln/rng.h"

using namespace dln;

namespace {

Array random_array(const Shape& shape, Rng* rng, double s = 1.0) {
  Array a(shape);
  for (Index i = 0; i < a.size(); ++i) a[i] = s * rng->normal();
  return a;
}

// Fills every parameter with generic values: weights small Gaussian, LN
// scales near one, shifts small. Keeps the normalizations well conditioned.
void randomize_model(Model* m, std::uint64_t seed) {
  Rng rng(seed);
  for_each_param(m, [&](const std::string& name, Array* a) {
    bool is_scale = name.find("scale") != std::string::npos;
    for (Index i = 0; i < a->size(); ++i)
      (*a)[i] = is_scale ? 1.0 + 0.2 * rng.normal() : 0.4 * rng.normal();
  });
}

double max_abs_diff(const Array& a, const Array& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- Independent single-step reference, written with plain scalar loops ----

std::vector<double> ref_matvec(const Array& w, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j)
      y[static_cast<std::size_t>(i)] += w.at(i, j) * x[static_cast<std::size_t>(j)];
  return y;
}

std::vector<double> ref_ln(const std::vector<double>& v, const Array& scale,
                           const Array& shift, double eps) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  double sigma = std::sqrt(var + eps);
  std::vector<double> y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    y[i] = scale[static_cast<Index>(i)] * (v[i] - mu) / sigma +
           (shift.size() ? shift[static_cast<Index>(i)] : 0.0);
  return y;
}

struct RefState {
  std::vector<double> h, c;
};

RefState ref_step(const LstmpLayerParams& p, const std::vector<double>& x,
                  const RefState& prev, double eps) {
  Array no_shift;
  std::vector<std::vector<double>> act(kNumGates);
  for (int g = 0; g < kNumGates; ++g) {
    std::vector<double> zx =
        ref_ln(ref_matvec(p.W[static_cast<std::size_t>(g)], x),
               p.ln[static_cast<std::size_t>(g)].scale_x,
               p.ln[static_cast<std::size_t>(g)].shift, eps);
    std::vector<double> zh =
        ref_ln(ref_matvec(p.U[static_cast<std::size_t>(g)], prev.h),
               p.ln[static_cast<std::size_t>(g)].scale_h, no_shift, eps);
    std::vector<double> pre(zx.size());
    for (std::size_t i = 0; i < zx.size(); ++i) pre[i] = zx[i] + zh[i];
    act[static_cast<std::size_t>(g)].resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i)
      act[static_cast<std::size_t>(g)][i] =
          g == 3 ? std::tanh(pre[i]) : 1.0 / (1.0 + std::exp(-pre[i]));
  }
  RefState next;
  next.c.resize(prev.c.size());
  for (std::size_t i = 0; i < prev.c.size(); ++i)
    next.c[i] = act[1][i] * prev.c[i] + act[0][i] * act[3][i];
  std::vector<double> cn = ref_ln(next.c, p.scale_c, p.shift_c, eps);
  std::vector<double> gated(cn.size());
  for (std::size_t i = 0; i < cn.size(); ++i)
    gated[i] = act[2][i] * std::tanh(cn[i]);
  next.h = ref_matvec(p.W_p, gated);
  return next;
}

StackConfig tiny_static() {
  StackConfig cfg;
  cfg.num_layers = 1;
  cfg.cell_size = 4;
  cfg.proj_size = 2;
  cfg.input_dim = 3;
  cfg.num_classes = 3;
  return cfg;
}

}  // namespace

TEST_CASE("all-zero parameters give exactly zero state") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);  // zeros
  Graph g;
  BoundModel bm = bind_model(&g, m, false);
  Rng rng(1);
  CellState prev{g.constant(Array(Shape{cfg.proj_size}, 0.0)),
                 g.constant(Array(Shape{cfg.cell_size}, 0.0))};
  Tensor x = g.constant(random_array(Shape{cfg.input_dim}, &rng));
  const BoundDirection& dir = bm.layers[0].fwd;
  CellState next = lstmp_step(&g, dir, static_ln(dir), x, prev, cfg.eps);
  // All gate pre-activations are zero, so i=f=o=1/2 and c'=0; everything
  // downstream collapses to zero.
  for (Index i = 0; i < next.c.size(); ++i) CHECK(next.c.value()[i] == 0.0);
  for (Index i = 0; i < next.h.size(); ++i) CHECK(next.h.value()[i] == 0.0);
}

TEST_CASE("saturated forget gate carries the cell state unchanged") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  // Forget gate pinned open, input gate pinned shut, via the gate shifts.
  for (Index i = 0; i < cfg.cell_size; ++i) {
    m.layers[0].fwd.ln[1].shift[i] = 100.0;   // f -> sigmoid(100) == 1.0
    m.layers[0].fwd.ln[0].shift[i] = -100.0;  // i -> ~0 (and c' is 0 anyway)
  }
  Rng rng(2);
  Array c0 = random_array(Shape{cfg.cell_size}, &rng);
  Graph g;
  BoundModel bm = bind_model(&g, m, false);
  const BoundDirection& dir = bm.layers[0].fwd;
  CellState s{g.constant(Array(Shape{cfg.proj_size}, 0.0)), g.constant(c0)};
  for (int t = 0; t < 3; ++t) {
    Tensor x = g.constant(random_array(Shape{cfg.input_dim}, &rng));
    s = lstmp_step(&g, dir, static_ln(dir), x, s, cfg.eps);
  }
  for (Index i = 0; i < cfg.cell_size; ++i) CHECK(s.c.value()[i] == c0[i]);
}

TEST_CASE("one step matches a straight-line scalar reference") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  randomize_model(&m, 3);
  Rng rng(4);
  Array x = random_array(Shape{cfg.input_dim}, &rng);
  Array h0 = random_array(Shape{cfg.proj_size}, &rng);
  Array c0 = random_array(Shape{cfg.cell_size}, &rng);

  Graph g;
  BoundModel bm = bind_model(&g, m, false);
  const BoundDirection& dir = bm.layers[0].fwd;
  CellState next = lstmp_step(&g, dir, static_ln(dir), g.constant(x),
                              {g.constant(h0), g.constant(c0)}, cfg.eps);

  RefState prev{{h0[0], h0[1]}, {c0[0], c0[1], c0[2], c0[3]}};
  RefState want = ref_step(m.layers[0].fwd, {x[0], x[1], x[2]}, prev, cfg.eps);
  for (Index i = 0; i < cfg.cell_size; ++i)
    CHECK(std::abs(next.c.value()[i] -
                   want.c[static_cast<std::size_t>(i)]) < 1e-12);
  for (Index i = 0; i < cfg.proj_size; ++i)
    CHECK(std::abs(next.h.value()[i] -
                   want.h[static_cast<std::size_t>(i)]) < 1e-12);
}

TEST_CASE("a three-step scan matches chained single steps") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  randomize_model(&m, 5);
  Rng rng(6);
  const Index T = 3;
  Array inputs(Shape{T, cfg.input_dim});
  for (Index i = 0; i < inputs.size(); ++i) inputs[i] = rng.normal();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(T), 1);

  Graph g;
  BoundModel bm = bind_model(&g, m, false);
  const BoundDirection& f = bm.layers[0].fwd;
  const BoundDirection& b = bm.layers[0].bwd;
  Array out =
      bidir_layer(&g, f, b, static_ln(f), static_ln(b), g.constant(inputs),
                  mask, cfg.eps)
          .value();
  REQUIRE(out.rows() == T);
  REQUIRE(out.cols() == 2 * cfg.proj_size);

  auto row_of = [&](Index t) {
    Array r(Shape{cfg.input_dim});
    for (Index j = 0; j < cfg.input_dim; ++j) r[j] = inputs.at(t, j);
    return r;
  };
  // Forward chain.
  {
    Graph g2;
    BoundModel bm2 = bind_model(&g2, m, false);
    const BoundDirection& d = bm2.layers[0].fwd;
    CellState s{g2.constant(Array(Shape{cfg.proj_size}, 0.0)),
                g2.constant(Array(Shape{cfg.cell_size}, 0.0))};
    for (Index t = 0; t < T; ++t) {
      s = lstmp_step(&g2, d, static_ln(d), g2.constant(row_of(t)), s, cfg.eps);
      for (Index j = 0; j < cfg.proj_size; ++j)
        CHECK(std::abs(out.at(t, j) - s.h.value()[j]) < 1e-12);
    }
  }
  // Backward chain (walks t = T-1 .. 0).
  {
    Graph g2;
    BoundModel bm2 = bind_model(&g2, m, false);
    const BoundDirection& d = bm2.layers[0].bwd;
    CellState s{g2.constant(Array(Shape{cfg.proj_size}, 0.0)),
                g2.constant(Array(Shape{cfg.cell_size}, 0.0))};
    for (Index t = T - 1; t >= 0; --t) {
      s = lstmp_step(&g2, d, static_ln(d), g2.constant(row_of(t)), s, cfg.eps);
      for (Index j = 0; j < cfg.proj_size; ++j)
        CHECK(std::abs(out.at(t, cfg.proj_size + j) - s.h.value()[j]) < 1e-12);
    }
  }
}

TEST_CASE("swapping directions and reversing time mirrors the output") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  randomize_model(&m, 7);
  Rng rng(8);
  const Index T = 5;
  Array x(Shape{T, cfg.input_dim});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Array xrev(Shape{T, cfg.input_dim});
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < cfg.input_dim; ++j)
      xrev.at(t, j) = x.at(T - 1 - t, j);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(T), 1);

  Graph g1, g2;
  BoundModel b1 = bind_model(&g1, m, false);
  BoundModel b2 = bind_model(&g2, m, false);
  Array out = bidir_layer(&g1, b1.layers[0].fwd, b1.layers[0].bwd,
                          static_ln(b1.layers[0].fwd),
                          static_ln(b1.layers[0].bwd), g1.constant(x), mask,
                          cfg.eps)
                  .value();
  Array mirrored = bidir_layer(&g2, b2.layers[0].bwd, b2.layers[0].fwd,
                               static_ln(b2.layers[0].bwd),
                               static_ln(b2.layers[0].fwd), g2.constant(xrev),
                               mask, cfg.eps)
                       .value();
  // mirrored[t] = [bwd-half ; fwd-half] of out[T-1-t].
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < cfg.proj_size; ++j) {
      CHECK(mirrored.at(t, j) == out.at(T - 1 - t, cfg.proj_size + j));
      CHECK(mirrored.at(t, cfg.proj_size + j) == out.at(T - 1 - t, j));
    }
}

TEST_CASE("padding behind the mask changes nothing") {
  StackConfig cfg = tiny_static();
  cfg.num_layers = 2;
  Model m = build_model(cfg);
  randomize_model(&m, 9);
  Rng rng(10);
  const Index T = 3, Tpad = 5;
  Array x(Shape{T, cfg.input_dim});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Array xpad(Shape{Tpad, cfg.input_dim}, 0.0);
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < cfg.input_dim; ++j) xpad.at(t, j) = x.at(t, j);
  // Garbage in the padded rows must be invisible too.
  for (Index t = T; t < Tpad; ++t)
    for (Index j = 0; j < cfg.input_dim; ++j) xpad.at(t, j) = rng.normal();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(T), 1);
  std::vector<std::uint8_t> mask_pad(static_cast<std::size_t>(Tpad), 0);
  for (Index t = 0; t < T; ++t) mask_pad[static_cast<std::size_t>(t)] = 1;

  Graph g1, g2;
  Array out = stack_forward(&g1, bind_model(&g1, m, false), x, mask)
                  .logits.value();
  Array outp = stack_forward(&g2, bind_model(&g2, m, false), xpad, mask_pad)
                   .logits.value();
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < cfg.num_classes; ++j)
      CHECK(out.at(t, j) == outp.at(t, j));
  // Padded rows carry no recurrent signal, so only the output bias remains.
  for (Index t = T; t < Tpad; ++t)
    for (Index j = 0; j < cfg.num_classes; ++j)
      CHECK(outp.at(t, j) == m.output.b_y[j]);
}

TEST_CASE("zero model maps every frame to zero logits") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  Rng rng(11);
  Array x(Shape{4, cfg.input_dim});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  std::vector<std::uint8_t> mask(4, 1);
  Graph g;
  Array logits =
      stack_forward(&g, bind_model(&g, m, false), x, mask).logits.value();
  for (Index i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0);
}

TEST_CASE("stack_forward validates its input") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  Graph g;
  BoundModel bm = bind_model(&g, m, false);
  std::vector<std::uint8_t> mask(4, 1);
  CHECK_THROWS_AS(stack_forward(&g, bm, Array(Shape{4, cfg.input_dim + 1}, 0.0),
                                mask),
                  Error);
  CHECK_THROWS_AS(stack_forward(&g, bm, Array(Shape{3, cfg.input_dim}, 0.0),
                                mask),
                  Error);
}

TEST_CASE("configuration validation") {
  StackConfig cfg = tiny_static();
  cfg.proj_size = cfg.cell_size;  // projection must reduce
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_static();
  cfg.dln_cell_state = true;  // needs dln
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_static();
  cfg.dln = true;
  cfg.summary_size = cfg.cell_size;  // summary must be smaller than d
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_static();
  cfg.num_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_static();
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

// ---- Parameter accounting ---------------------------------------------------

namespace {

// Closed-form count, independent of the registry walk.
Index formula_count(const StackConfig& cfg) {
  Index total = 0;
  for (Index l = 0; l < cfg.num_layers; ++l) {
    Index in = cfg.layer_input_dim(l);
    Index d = cfg.cell_size, dp = cfg.proj_size, p = cfg.summary_size;
    Index dir = 4 * d * in + 4 * d * dp + dp * d;  // W, U, W_p
    if (cfg.dln) {
      dir += p * in + p;                      // summarizer
      dir += 4 * 3 * (d * p + d);             // generator pairs
      if (cfg.dln_cell_state) dir += 2 * (d * p + d);
      else dir += 2 * d;                      // static cell LN
    } else {
      dir += 4 * 3 * d;  // static gate LN vectors
      dir += 2 * d;      // static cell LN
    }
    total += 2 * dir;
  }
  total += cfg.num_classes * 2 * cfg.proj_size + cfg.num_classes;
  return total;
}

StackConfig preset_cfg(Index classes, bool dln) {
  StackConfig cfg;  // 3 layers, d=512, d'=256, D=123, p'=64 are the defaults
  cfg.num_classes = classes;
  cfg.dln = dln;
  return cfg;
}

}  // namespace

TEST_CASE("reference model sizes are reproduced exactly") {
  CHECK(count_params(preset_cfg(3436, false)) == 10435948);
  CHECK(count_params(preset_cfg(3436, true)) == 12942444);
  CHECK(count_params(preset_cfg(4174, false)) == 10814542);
  CHECK(count_params(preset_cfg(4174, true)) == 13321038);

  CHECK(param_count_millions(10435948) == "10.44M");
  CHECK(param_count_millions(12942444) == "12.94M");
  CHECK(param_count_millions(10814542) == "10.81M");
  CHECK(param_count_millions(13321038) == "13.32M");
}

TEST_CASE("adapter cost does not depend on the output layer size") {
  Index delta_a =
      count_params(preset_cfg(3436, true)) - count_params(preset_cfg(3436, false));
  Index delta_b =
      count_params(preset_cfg(4174, true)) - count_params(preset_cfg(4174, false));
  CHECK(delta_a == delta_b);
  CHECK(delta_a == 2506496);
}

TEST_CASE("count_params agrees with a closed-form expression") {
  Rng rng(12);
  for (int trial = 0; trial < 12; ++trial) {
    StackConfig cfg;
    cfg.num_layers = 1 + static_cast<Index>(rng.uniform_int(3));
    cfg.cell_size = 4 + static_cast<Index>(rng.uniform_int(12));
    cfg.proj_size = 1 + static_cast<Index>(rng.uniform_int(
        static_cast<std::uint64_t>(cfg.cell_size - 1)));
    cfg.input_dim = 1 + static_cast<Index>(rng.uniform_int(9));
    cfg.num_classes = 2 + static_cast<Index>(rng.uniform_int(20));
    cfg.dln = rng.uniform() < 0.5;
    if (cfg.dln) {
      cfg.summary_size = 1 + static_cast<Index>(rng.uniform_int(
          static_cast<std::uint64_t>(cfg.cell_size - 1)));
      cfg.dln_cell_state = rng.uniform() < 0.5;
    }
    cfg.validate();
    CHECK(count_params(cfg) == formula_count(cfg));
  }
}

TEST_CASE("hand-counted tiny configurations") {
  StackConfig cfg;
  cfg.num_layers = 1;
  cfg.cell_size = 2;
  cfg.proj_size = 1;
  cfg.input_dim = 2;
  cfg.num_classes = 2;
  // Per direction: W 4*(2x2)=16, U 4*(2x1)=8, W_p 1x2=2,
  // gate LN 4*(2+2+2)=24, cell LN 2+2=4 -> 54. Both directions 108.
  // Output: 2*(2*1)+2=6. Total 114.
  CHECK(count_params(cfg) == 114);

  cfg.dln = true;
  cfg.summary_size = 1;
  // Per direction: W 16, U 8, W_p 2, summarizer 1x2+1=3,
  // generators 12*(2x1+2)=48, static cell LN 4 -> 81. Both 162.
  // Output 6. Total 168.
  CHECK(count_params(cfg) == 168);
}

TEST_CASE("parameter registry is consistent") {
  StackConfig cfg = tiny_static();
  cfg.num_layers = 2;
  cfg.dln = true;
  cfg.summary_size = 2;
  std::set<std::string> names;
  Index total = 0;
  for_each_param_shape(cfg, [&](const std::string& name, const Shape& shape) {
    CHECK(names.insert(name).second);  // unique
    total += shape_size(shape);
  });
  CHECK(total == count_params(cfg));

  // build_model allocates exactly the registry's shapes, in the same order.
  Model m = build_model(cfg);
  std::vector<Shape> want;
  for_each_param_shape(cfg, [&](const std::string&, const Shape& s) {
    want.push_back(s);
  });
  std::size_t k = 0;
  for_each_param(&m, [&](const std::string&, Array* a) {
    REQUIRE(k < want.size());
    CHECK(a->shape() == want[k]);
    ++k;
  });
  CHECK(k == want.size());
}

TEST_CASE("leaf binding follows the canonical order") {
  StackConfig cfg = tiny_static();
  cfg.dln = true;
  cfg.summary_size = 2;
  Model m = build_model(cfg);
  randomize_model(&m, 13);
  Rng rng(14);
  Array x(Shape{4, cfg.input_dim});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  std::vector<std::uint8_t> mask(4, 1);

  Graph g1;
  Array direct =
      stack_forward(&g1, bind_model(&g1, m, false), x, mask).logits.value();

  Graph g2;
  std::vector<Tensor> leaves;
  for_each_param(m, [&](const std::string&, const Array& a) {
    leaves.push_back(g2.leaf(a, false));
  });
  Array via_leaves =
      stack_forward(&g2, bind_model_leaves(&g2, cfg, leaves), x, mask)
          .logits.value();
  CHECK(max_abs_diff(direct, via_leaves) == 0.0);

  // Too few leaves is an error (fresh graph; the leaves above live on g2).
  Graph g3;
  std::vector<Tensor> bad;
  for_each_param(m, [&](const std::string&, const Array& a) {
    bad.push_back(g3.leaf(a, false));
  });
  bad.pop_back();
  CHECK_THROWS_AS(bind_model_leaves(&g3, cfg, bad), Error);
}

TEST_CASE("single-step gradients match finite differences") {
  StackConfig cfg = tiny_static();
  Model m = build_model(cfg);
  randomize_model(&m, 15);
  std::vector<Array> params;
  std::vector<std::string> names;
  for_each_param(m, [&](const std::string& name, const Array& a) {
    params.push_back(a);
    names.push_back(name);
  });
  Rng rng(16);
  Array x = random_array(Shape{cfg.input_dim}, &rng);
  Array h0 = random_array(Shape{cfg.proj_size}, &rng, 0.5);
  Array c0 = random_array(Shape{cfg.cell_size}, &rng, 0.5);

  auto loss_fn = [&](Graph* g, const std::vector<Tensor>& leaves) {
    BoundModel bm = bind_model_leaves(g, cfg, leaves);
    const BoundDirection& dir = bm.layers[0].fwd;
    CellState next = lstmp_step(g, dir, static_ln(dir), g->constant(x),
                                {g->constant(h0), g->constant(c0)}, cfg.eps);
    return add(sum(mul(next.h, next.h)), sum(mul(next.c, next.c)));
  };
  GradCheckReport rep = grad_check(loss_fn, &params, names, 1e-5);
  INFO("worst: ", rep.worst_param, "[", rep.worst_index, "]");
  CHECK(rep.max_rel_error < 1e-4);
}
