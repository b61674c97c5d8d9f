// dln/recurrent.h

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

#ifndef DLN_RECURRENT_H_
#define DLN_RECURRENT_H_

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "dln/norm.h"
#include "dln/tensor.h"

namespace dln {

// Gate order used everywhere: input, forget, output, candidate (c').
constexpr int kNumGates = 4;
extern const char* const kGateNames[kNumGates];  // "i", "f", "o", "cp"

// Generated/static layer-norm targets per gate.
constexpr int kNumGateTargets = 3;
extern const char* const kGateTargetNames[kNumGateTargets];
// "scale_x" normalizes W_g x_t, "scale_h" normalizes U_g h_{t-1}; "shift" is
// the single per-gate shift, applied on the input-to-hidden branch.

struct StackConfig {
  Index num_layers = 3;
  Index cell_size = 512;   // d
  Index proj_size = 256;   // d'
  Index input_dim = 123;   // D
  Index num_classes = 3436;
  bool dln = false;
  Index summary_size = 64;  // p'
  bool dln_cell_state = false;
  double lambda = 0.0;  // variance-penalty weight used when training
  double eps = 1e-5;

  Index layer_input_dim(Index layer) const {  // layer is 0-based
    return layer == 0 ? input_dim : 2 * proj_size;
  }
  void validate() const;
};

// Weights of one direction of one layer. Static-LN models carry the gate LN
// vectors; DLN models carry a summarizer and generator pairs instead (the
// static gate vectors then do not exist). Cell LN stays static unless
// dln_cell_state is set.
struct StaticGateLn {
  Array scale_x;  // alpha_g
  Array scale_h;  // alpha'_g
  Array shift;    // beta_g (single shift per gate)
};

struct GenPair {
  Array W;  // [d x p']
  Array b;  // [d]
};

struct AdapterParams {
  Array W_a;  // [p' x in_dim]
  Array b_a;  // [p']
  std::array<std::array<GenPair, kNumGateTargets>, kNumGates> gen;
  GenPair gen_cell_scale;  // only with dln_cell_state
  GenPair gen_cell_shift;
};

struct LstmpLayerParams {
  std::array<Array, kNumGates> W;  // [d x in_dim]
  std::array<Array, kNumGates> U;  // [d x d']
  Array W_p;                       // [d' x d]
  std::array<StaticGateLn, kNumGates> ln;  // static mode only
  Array scale_c, shift_c;                  // static cell LN
  AdapterParams adapter;                   // DLN mode only
};

struct BidirLayerParams {
  LstmpLayerParams fwd, bwd;
};

struct OutputParams {
  Array W_y;  // [num_classes x 2d']
  Array b_y;  // [num_classes]
};

struct Model {
  StackConfig cfg;
  std::vector<BidirLayerParams> layers;
  OutputParams output;
};

// Canonical parameter enumeration. Every consumer of the full parameter set
// (Adam state, checkpoints, gradient binding, counting) walks this order.
void for_each_param_shape(
    const StackConfig& cfg,
    const std::function<void(const std::string&, const Shape&)>& fn);
void for_each_param(Model* model,
                    const std::function<void(const std::string&, Array*)>& fn);
void for_each_param(
    const Model& model,
    const std::function<void(const std::string&, const Array&)>& fn);

// Allocates all parameters as zeros (no RNG involved).
Model build_model(const StackConfig& cfg);

// Exact trainable-parameter count for the configuration.
Index count_params(const StackConfig& cfg);

// Rounded "x.xxM" form used in reports.
std::string param_count_millions(Index count);

// ---- Graph-bound views -------------------------------------------------------

struct BoundGenPair {
  Tensor W, b;
};

struct BoundAdapter {
  Tensor W_a, b_a;
  std::array<std::array<BoundGenPair, kNumGateTargets>, kNumGates> gen;
  BoundGenPair gen_cell_scale, gen_cell_shift;
};

struct BoundGateLn {
  Tensor scale_x, scale_h, shift;
};

struct BoundDirection {
  std::array<Tensor, kNumGates> W, U;
  Tensor W_p;
  std::array<BoundGateLn, kNumGates> ln;  // static mode
  Tensor scale_c, shift_c;                // static cell LN
  BoundAdapter adapter;                   // DLN mode
};

struct BoundLayer {
  BoundDirection fwd, bwd;
};

struct BoundModel {
  StackConfig cfg;
  std::vector<BoundLayer> layers;
  Tensor W_y, b_y;
};

// Effective LN parameters consumed by one direction of one layer for one
// utterance: static leaves for a plain model, generated tensors under DLN.
struct EffectiveLn {
  std::array<BoundGateLn, kNumGates> gate;
  Tensor scale_c, shift_c;
};

BoundModel bind_model(Graph* g, const Model& model, bool requires_grad);
// Assembles the bound view from pre-made leaves in canonical order (used by
// gradient checking, where the caller owns the leaves).
BoundModel bind_model_leaves(Graph* g, const StackConfig& cfg,
                             const std::vector<Tensor>& leaves);

EffectiveLn static_ln(const BoundDirection& dir);

struct CellState {
  Tensor h;  // [d']
  Tensor c;  // [d]
};

// One LN-LSTMP step:
//   pre_g = LN(W_g x; scale_x_g, shift_g) + LN(U_g h_prev; scale_h_g, 0)
//   i,f,o = sigmoid(pre), c' = tanh(pre)
//   c = f (.) c_prev + i (.) c'
//   h = W_p (o (.) tanh(LN(c; scale_c, shift_c)))
CellState lstmp_step(Graph* g, const BoundDirection& dir,
                     const EffectiveLn& ln, const Tensor& x_t,
                     const CellState& prev, double eps);

// Bidirectional layer over a [T x in_dim] input matrix. Masked (padded)
// steps emit zero outputs and carry the recurrent state through unchanged,
// so valid positions match the unpadded computation exactly. Output is
// [T x 2d'], fwd block first.
Tensor bidir_layer(Graph* g, const BoundDirection& fwd,
                   const BoundDirection& bwd, const EffectiveLn& eff_fwd,
                   const EffectiveLn& eff_bwd, const Tensor& inputs,
                   const std::vector<std::uint8_t>& mask, double eps);

struct ForwardResult {
  Tensor logits;  // [T x num_classes], pre-softmax
  // summaries[layer][0]=fwd, [1]=bwd; empty unless cfg.dln
  std::vector<std::array<Tensor, 2>> summaries;
};

// Full stack: L bidirectional layers then the affine output map. Under DLN
// each layer/direction first summarizes its input sequence and generates its
// gate LN parameters from the summary.
ForwardResult stack_forward(Graph* g, const BoundModel& model,
                            const Array& frames,
                            const std::vector<std::uint8_t>& mask);

}  // namespace dln

#endif  // DLN_RECURRENT_H_
