// recurrent.cc

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

#include "dln/recurrent.h"

#include <cmath>
#include <cstdio>

#include "dln/adapt.h"

namespace dln {

const char* const kGateNames[kNumGates] = {"i", "f", "o", "cp"};
const char* const kGateTargetNames[kNumGateTargets] = {"scale_x", "scale_h",
                                                       "shift"};

void StackConfig::validate() const {
  if (num_layers < 1) fail("StackConfig: num_layers must be >= 1");
  if (cell_size < 1 || proj_size < 1 || input_dim < 1 || num_classes < 1)
    fail("StackConfig: all extents must be positive");
  if (proj_size >= cell_size)
    fail("StackConfig: proj_size must be less than cell_size");
  if (dln && (summary_size < 1 || summary_size >= cell_size))
    fail("StackConfig: summary_size must be in [1, cell_size)");
  if (dln_cell_state && !dln)
    fail("StackConfig: dln_cell_state requires dln");
  if (eps <= 0.0) fail("StackConfig: eps must be positive");
  if (lambda < 0.0) fail("StackConfig: lambda must be >= 0");
}

namespace {

const char* dir_name(int dir) { return dir == 0 ? "fwd" : "bwd"; }

LstmpLayerParams* dir_params(Model* m, Index layer, int dir) {
  BidirLayerParams& bl = m->layers[static_cast<std::size_t>(layer)];
  return dir == 0 ? &bl.fwd : &bl.bwd;
}

// Canonical walk over every trainable parameter slot: name, shape, and an
// accessor resolving the slot inside a Model. The accessor keeps counting,
// construction, binding, checkpoints and the optimizer in one order.
using SlotFn = std::function<void(const std::string&, const Shape&,
                                  const std::function<Array*(Model*)>&)>;

void walk_slots(const StackConfig& cfg, const SlotFn& fn) {
  cfg.validate();
  const Index d = cfg.cell_size;
  const Index dp = cfg.proj_size;
  const Index pp = cfg.summary_size;
  for (Index l = 0; l < cfg.num_layers; ++l) {
    const Index in = cfg.layer_input_dim(l);
    for (int dir = 0; dir < 2; ++dir) {
      const std::string prefix =
          "layer" + std::to_string(l + 1) + "." + dir_name(dir) + ".";
      for (int gate = 0; gate < kNumGates; ++gate) {
        fn(prefix + "W_" + kGateNames[gate], Shape{d, in},
           [l, dir, gate](Model* m) {
             return &dir_params(m, l, dir)->W[static_cast<std::size_t>(gate)];
           });
        fn(prefix + "U_" + kGateNames[gate], Shape{d, dp},
           [l, dir, gate](Model* m) {
             return &dir_params(m, l, dir)->U[static_cast<std::size_t>(gate)];
           });
      }
      fn(prefix + "W_p", Shape{dp, d},
         [l, dir](Model* m) { return &dir_params(m, l, dir)->W_p; });
      if (!cfg.dln) {
        for (int gate = 0; gate < kNumGates; ++gate) {
          fn(prefix + "scale_x_" + kGateNames[gate], Shape{d},
             [l, dir, gate](Model* m) {
               return &dir_params(m, l, dir)->ln[static_cast<std::size_t>(gate)].scale_x;
             });
          fn(prefix + "scale_h_" + kGateNames[gate], Shape{d},
             [l, dir, gate](Model* m) {
               return &dir_params(m, l, dir)->ln[static_cast<std::size_t>(gate)].scale_h;
             });
          fn(prefix + "shift_" + kGateNames[gate], Shape{d},
             [l, dir, gate](Model* m) {
               return &dir_params(m, l, dir)->ln[static_cast<std::size_t>(gate)].shift;
             });
        }
      }
      if (!cfg.dln_cell_state) {
        fn(prefix + "scale_c", Shape{d},
           [l, dir](Model* m) { return &dir_params(m, l, dir)->scale_c; });
        fn(prefix + "shift_c", Shape{d},
           [l, dir](Model* m) { return &dir_params(m, l, dir)->shift_c; });
      }
      if (cfg.dln) {
        fn(prefix + "W_a", Shape{pp, in}, [l, dir](Model* m) {
          return &dir_params(m, l, dir)->adapter.W_a;
        });
        fn(prefix + "b_a", Shape{pp}, [l, dir](Model* m) {
          return &dir_params(m, l, dir)->adapter.b_a;
        });
        for (int gate = 0; gate < kNumGates; ++gate) {
          for (int tgt = 0; tgt < kNumGateTargets; ++tgt) {
            const std::string gen_prefix = prefix + "gen." +
                                           kGateNames[gate] + "." +
                                           kGateTargetNames[tgt] + ".";
            fn(gen_prefix + "W", Shape{d, pp}, [l, dir, gate, tgt](Model* m) {
              return &dir_params(m, l, dir)
                          ->adapter.gen[static_cast<std::size_t>(gate)]
                                       [static_cast<std::size_t>(tgt)]
                          .W;
            });
            fn(gen_prefix + "b", Shape{d}, [l, dir, gate, tgt](Model* m) {
              return &dir_params(m, l, dir)
                          ->adapter.gen[static_cast<std::size_t>(gate)]
                                       [static_cast<std::size_t>(tgt)]
                          .b;
            });
          }
        }
        if (cfg.dln_cell_state) {
          fn(prefix + "gen.cell.scale.W", Shape{d, pp}, [l, dir](Model* m) {
            return &dir_params(m, l, dir)->adapter.gen_cell_scale.W;
          });
          fn(prefix + "gen.cell.scale.b", Shape{d}, [l, dir](Model* m) {
            return &dir_params(m, l, dir)->adapter.gen_cell_scale.b;
          });
          fn(prefix + "gen.cell.shift.W", Shape{d, pp}, [l, dir](Model* m) {
            return &dir_params(m, l, dir)->adapter.gen_cell_shift.W;
          });
          fn(prefix + "gen.cell.shift.b", Shape{d}, [l, dir](Model* m) {
            return &dir_params(m, l, dir)->adapter.gen_cell_shift.b;
          });
        }
      }
    }
  }
  fn("output.W_y", Shape{cfg.num_classes, 2 * dp},
     [](Model* m) { return &m->output.W_y; });
  fn("output.b_y", Shape{cfg.num_classes},
     [](Model* m) { return &m->output.b_y; });
}

}  // namespace

void for_each_param_shape(
    const StackConfig& cfg,
    const std::function<void(const std::string&, const Shape&)>& fn) {
  walk_slots(cfg, [&fn](const std::string& name, const Shape& shape,
                        const std::function<Array*(Model*)>&) {
    fn(name, shape);
  });
}

void for_each_param(Model* model,
                    const std::function<void(const std::string&, Array*)>& fn) {
  walk_slots(model->cfg,
             [&fn, model](const std::string& name, const Shape&,
                          const std::function<Array*(Model*)>& get) {
               fn(name, get(model));
             });
}

void for_each_param(
    const Model& model,
    const std::function<void(const std::string&, const Array&)>& fn) {
  for_each_param(const_cast<Model*>(&model),
                 [&fn](const std::string& name, Array* a) { fn(name, *a); });
}

Model build_model(const StackConfig& cfg) {
  Model m;
  m.cfg = cfg;
  m.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  walk_slots(cfg, [&m](const std::string&, const Shape& shape,
                       const std::function<Array*(Model*)>& get) {
    *get(&m) = Array(shape);
  });
  return m;
}

Index count_params(const StackConfig& cfg) {
  Index total = 0;
  for_each_param_shape(
      cfg, [&total](const std::string&, const Shape& s) { total += shape_size(s); });
  return total;
}

std::string param_count_millions(Index count) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(count) / 1e6);
  return buf;
}

// ---- Binding ------------------------------------------------------------------

BoundModel bind_model_leaves(Graph* g, const StackConfig& cfg,
                             const std::vector<Tensor>& leaves) {
  cfg.validate();
  (void)g;
  std::size_t cur = 0;
  auto next = [&leaves, &cur]() -> Tensor {
    if (cur >= leaves.size()) fail("bind_model_leaves: too few leaves");
    return leaves[cur++];
  };

  BoundModel bm;
  bm.cfg = cfg;
  bm.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (Index l = 0; l < cfg.num_layers; ++l) {
    for (int dir = 0; dir < 2; ++dir) {
      BoundDirection& bd = dir == 0 ? bm.layers[static_cast<std::size_t>(l)].fwd
                                    : bm.layers[static_cast<std::size_t>(l)].bwd;
      for (int gate = 0; gate < kNumGates; ++gate) {
        bd.W[static_cast<std::size_t>(gate)] = next();
        bd.U[static_cast<std::size_t>(gate)] = next();
      }
      bd.W_p = next();
      if (!cfg.dln) {
        for (int gate = 0; gate < kNumGates; ++gate) {
          BoundGateLn& ln = bd.ln[static_cast<std::size_t>(gate)];
          ln.scale_x = next();
          ln.scale_h = next();
          ln.shift = next();
        }
      }
      if (!cfg.dln_cell_state) {
        bd.scale_c = next();
        bd.shift_c = next();
      }
      if (cfg.dln) {
        bd.adapter.W_a = next();
        bd.adapter.b_a = next();
        for (int gate = 0; gate < kNumGates; ++gate)
          for (int tgt = 0; tgt < kNumGateTargets; ++tgt) {
            BoundGenPair& gp = bd.adapter.gen[static_cast<std::size_t>(gate)]
                                             [static_cast<std::size_t>(tgt)];
            gp.W = next();
            gp.b = next();
          }
        if (cfg.dln_cell_state) {
          bd.adapter.gen_cell_scale.W = next();
          bd.adapter.gen_cell_scale.b = next();
          bd.adapter.gen_cell_shift.W = next();
          bd.adapter.gen_cell_shift.b = next();
        }
      }
    }
  }
  bm.W_y = next();
  bm.b_y = next();
  if (cur != leaves.size()) fail("bind_model_leaves: too many leaves");
  return bm;
}

BoundModel bind_model(Graph* g, const Model& model, bool requires_grad) {
  std::vector<Tensor> leaves;
  for_each_param(model, [&](const std::string&, const Array& a) {
    leaves.push_back(g->leaf(a, requires_grad));
  });
  return bind_model_leaves(g, model.cfg, leaves);
}

EffectiveLn static_ln(const BoundDirection& dir) {
  EffectiveLn eff;
  eff.gate = dir.ln;
  eff.scale_c = dir.scale_c;
  eff.shift_c = dir.shift_c;
  return eff;
}

// ---- Forward -------------------------------------------------------------------

namespace {

struct StepInputs {
  // Gate pre-activation contributions from the input-to-hidden branch,
  // already layer-normalized (shift included).
  std::array<Tensor, kNumGates> zx;
};

CellState cell_body(Graph* g, const BoundDirection& dir, const EffectiveLn& ln,
                    const StepInputs& in, const CellState& prev,
                    const Tensor& zero_shift, const LnConfig& cfg) {
  (void)g;
  std::array<Tensor, kNumGates> pre;
  for (int gate = 0; gate < kNumGates; ++gate) {
    const auto gi = static_cast<std::size_t>(gate);
    Tensor zh = layer_norm(matmul(dir.U[gi], prev.h), ln.gate[gi].scale_h,
                           zero_shift, cfg);
    pre[gi] = add(in.zx[gi], zh);
  }
  Tensor gate_i = sigmoid(pre[0]);
  Tensor gate_f = sigmoid(pre[1]);
  Tensor gate_o = sigmoid(pre[2]);
  Tensor cand = tanh(pre[3]);
  Tensor c = add(mul(gate_f, prev.c), mul(gate_i, cand));
  Tensor c_norm = tanh(layer_norm(c, ln.scale_c, ln.shift_c, cfg));
  Tensor h = matmul(dir.W_p, mul(gate_o, c_norm));
  return CellState{h, c};
}

}  // namespace

CellState lstmp_step(Graph* g, const BoundDirection& dir,
                     const EffectiveLn& ln, const Tensor& x_t,
                     const CellState& prev, double eps) {
  LnConfig cfg{eps};
  const Index d = dir.W[0].value().rows();
  Tensor zero_shift = g->constant(Array(Shape{d}, 0.0));
  StepInputs in;
  for (int gate = 0; gate < kNumGates; ++gate) {
    const auto gi = static_cast<std::size_t>(gate);
    in.zx[gi] = layer_norm(matmul(dir.W[gi], x_t), ln.gate[gi].scale_x,
                           ln.gate[gi].shift, cfg);
  }
  return cell_body(g, dir, ln, in, prev, zero_shift, cfg);
}

namespace {

// One direction's scan. The input-to-hidden products for all steps are
// computed as a single matrix product per gate, then row-normalized; the
// recurrence walks valid steps only. Masked steps emit zeros and leave the
// state untouched, so valid positions equal the unpadded computation.
std::vector<Tensor> scan_direction(Graph* g, const BoundDirection& dir,
                                   const EffectiveLn& eff, const Tensor& inputs,
                                   const std::vector<std::uint8_t>& mask,
                                   bool reverse, double eps) {
  LnConfig cfg{eps};
  const Index t_max = inputs.value().rows();
  const Index d = dir.W[0].value().rows();
  const Index dp = dir.W_p.value().rows();

  std::array<Tensor, kNumGates> zx_all;
  for (int gate = 0; gate < kNumGates; ++gate) {
    const auto gi = static_cast<std::size_t>(gate);
    zx_all[gi] = layer_norm(matmul_nt(inputs, dir.W[gi]), eff.gate[gi].scale_x,
                            eff.gate[gi].shift, cfg);
  }

  Tensor zero_shift = g->constant(Array(Shape{d}, 0.0));
  Tensor zero_out = g->constant(Array(Shape{dp}, 0.0));
  CellState state{g->constant(Array(Shape{dp}, 0.0)),
                  g->constant(Array(Shape{d}, 0.0))};

  std::vector<Tensor> outputs(static_cast<std::size_t>(t_max));
  for (Index step = 0; step < t_max; ++step) {
    const Index t = reverse ? t_max - 1 - step : step;
    if (!mask[static_cast<std::size_t>(t)]) {
      outputs[static_cast<std::size_t>(t)] = zero_out;
      continue;
    }
    StepInputs in;
    for (int gate = 0; gate < kNumGates; ++gate) {
      const auto gi = static_cast<std::size_t>(gate);
      in.zx[gi] = row(zx_all[gi], t);
    }
    state = cell_body(g, dir, eff, in, state, zero_shift, cfg);
    outputs[static_cast<std::size_t>(t)] = state.h;
  }
  return outputs;
}

}  // namespace

Tensor bidir_layer(Graph* g, const BoundDirection& fwd,
                   const BoundDirection& bwd, const EffectiveLn& eff_fwd,
                   const EffectiveLn& eff_bwd, const Tensor& inputs,
                   const std::vector<std::uint8_t>& mask, double eps) {
  const Array& in_v = inputs.value();
  if (in_v.rank() != 2) fail("bidir_layer: inputs must be [T x in_dim]");
  if (static_cast<Index>(mask.size()) != in_v.rows())
    fail("bidir_layer: mask length does not match sequence length");
  std::vector<Tensor> f_out =
      scan_direction(g, fwd, eff_fwd, inputs, mask, /*reverse=*/false, eps);
  std::vector<Tensor> b_out =
      scan_direction(g, bwd, eff_bwd, inputs, mask, /*reverse=*/true, eps);
  return hconcat(stack_rows(f_out), stack_rows(b_out));
}

ForwardResult stack_forward(Graph* g, const BoundModel& model,
                            const Array& frames,
                            const std::vector<std::uint8_t>& mask) {
  const StackConfig& cfg = model.cfg;
  if (frames.rank() != 2 || frames.cols() != cfg.input_dim)
    fail("stack_forward: frame dimension " +
         std::to_string(frames.rank() == 2 ? frames.cols() : -1) +
         " does not match configured input_dim " +
         std::to_string(cfg.input_dim));
  if (static_cast<Index>(mask.size()) != frames.rows())
    fail("stack_forward: mask length does not match frame count");

  ForwardResult res;
  Tensor h_seq = g->constant(frames);
  for (Index l = 0; l < cfg.num_layers; ++l) {
    const BoundLayer& layer = model.layers[static_cast<std::size_t>(l)];
    EffectiveLn eff_f, eff_b;
    if (cfg.dln) {
      Tensor a_f =
          summarize(g, layer.fwd.adapter.W_a, layer.fwd.adapter.b_a, h_seq, mask);
      Tensor a_b =
          summarize(g, layer.bwd.adapter.W_a, layer.bwd.adapter.b_a, h_seq, mask);
      eff_f = generate_ln_params(g, layer.fwd.adapter, a_f, layer.fwd.scale_c,
                                 layer.fwd.shift_c, cfg.dln_cell_state);
      eff_b = generate_ln_params(g, layer.bwd.adapter, a_b, layer.bwd.scale_c,
                                 layer.bwd.shift_c, cfg.dln_cell_state);
      res.summaries.push_back({a_f, a_b});
    } else {
      eff_f = static_ln(layer.fwd);
      eff_b = static_ln(layer.bwd);
    }
    h_seq = bidir_layer(g, layer.fwd, layer.bwd, eff_f, eff_b, h_seq, mask,
                        cfg.eps);
  }
  res.logits = add_rowvec(matmul_nt(h_seq, model.W_y), model.b_y);
  return res;
}

}  // namespace dln
