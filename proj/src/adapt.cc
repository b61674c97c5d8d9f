// adapt.cc

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

#include "dln/adapt.h"

namespace dln {

Tensor summarize(Graph* g, const Tensor& W_a, const Tensor& b_a,
                 const Tensor& h_seq, const std::vector<std::uint8_t>& mask) {
  const Array& hv = h_seq.value();
  if (hv.rank() != 2) fail("summarize: input sequence must be [T x in_dim]");
  const Index t_max = hv.rows();
  if (static_cast<Index>(mask.size()) != t_max)
    fail("summarize: mask length does not match sequence length");
  Index valid = 0;
  for (std::uint8_t m : mask) valid += m ? 1 : 0;
  if (valid == 0) fail("summarize: all frames masked");

  // tanh(H W_a^T + b_a), then a masked mean over time.
  Tensor per_frame = tanh(add_rowvec(matmul_nt(h_seq, W_a), b_a));
  Array weights(Shape{t_max}, 0.0);
  const double w = 1.0 / static_cast<double>(valid);
  for (Index t = 0; t < t_max; ++t)
    if (mask[static_cast<std::size_t>(t)]) weights[t] = w;
  (void)g;
  return weighted_rowsum(per_frame, weights);
}

EffectiveLn generate_ln_params(Graph* g, const BoundAdapter& adapter,
                               const Tensor& a, const Tensor& static_scale_c,
                               const Tensor& static_shift_c,
                               bool dln_cell_state) {
  (void)g;
  if (a.rank() != 1) fail("generate_ln_params: summary must be a vector");
  EffectiveLn eff;
  for (int gate = 0; gate < kNumGates; ++gate) {
    const auto& gp = adapter.gen[static_cast<std::size_t>(gate)];
    eff.gate[static_cast<std::size_t>(gate)] = BoundGateLn{
        add(matmul(gp[0].W, a), gp[0].b),   // scale_x
        add(matmul(gp[1].W, a), gp[1].b),   // scale_h
        add(matmul(gp[2].W, a), gp[2].b)};  // shift
  }
  if (dln_cell_state) {
    eff.scale_c = add(matmul(adapter.gen_cell_scale.W, a), adapter.gen_cell_scale.b);
    eff.shift_c = add(matmul(adapter.gen_cell_shift.W, a), adapter.gen_cell_shift.b);
  } else {
    eff.scale_c = static_scale_c;
    eff.shift_c = static_shift_c;
  }
  return eff;
}

Tensor variance_penalty(
    Graph* g,
    const std::vector<std::array<std::vector<Tensor>, 2>>& summaries,
    double lambda, Index summary_size) {
  if (lambda < 0.0) fail("variance_penalty: lambda must be >= 0");
  if (summaries.empty()) fail("variance_penalty: no layers");
  if (lambda == 0.0) return g->constant(0.0);

  const Index layers = static_cast<Index>(summaries.size());
  Tensor total;
  for (const auto& layer : summaries) {
    Tensor layer_term;
    for (int dir = 0; dir < 2; ++dir) {
      const std::vector<Tensor>& batch = layer[static_cast<std::size_t>(dir)];
      if (batch.empty()) fail("variance_penalty: empty batch for a direction");
      const Index b = static_cast<Index>(batch.size());
      Tensor stacked = stack_rows(batch);  // [B x p']
      Array w(Shape{b}, 1.0 / static_cast<double>(b));
      Tensor mean = weighted_rowsum(stacked, w);
      Tensor centered = add_rowvec(stacked, scale(mean, -1.0));
      Tensor var = weighted_rowsum(mul(centered, centered), w);  // population
      Tensor dir_sum = sum(var);
      layer_term = layer_term.defined() ? add(layer_term, dir_sum) : dir_sum;
    }
    // Directions averaged within the layer term.
    layer_term = scale(layer_term, 0.5);
    total = total.defined() ? add(total, layer_term) : layer_term;
  }
  const double factor =
      -lambda / (static_cast<double>(layers) * static_cast<double>(summary_size));
  return scale(total, factor);
}

}  // namespace dln
