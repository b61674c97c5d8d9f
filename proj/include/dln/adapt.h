// dln/adapt.h

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

#ifndef DLN_ADAPT_H_
#define DLN_ADAPT_H_

#include <array>
#include <vector>

#include "dln/recurrent.h"
#include "dln/tensor.h"

namespace dln {

// Utterance summary vector for one layer/direction:
//   a = (1/T_valid) sum_{valid t} tanh(W_a h_t + b_a)
// Every component lies in (-1, 1). Errors if the mask leaves no valid frame.
Tensor summarize(Graph* g, const Tensor& W_a, const Tensor& b_a,
                 const Tensor& h_seq, const std::vector<std::uint8_t>& mask);

// Generates the effective gate (and optionally cell) LN parameters from a
// summary vector: each target vector is W a + b. When the cell state is not
// generated, the static cell tensors are passed through.
EffectiveLn generate_ln_params(Graph* g, const BoundAdapter& adapter,
                               const Tensor& a, const Tensor& static_scale_c,
                               const Tensor& static_shift_c,
                               bool dln_cell_state);

// Variance penalty over a mini-batch (negative; zero when every feature is
// constant across the batch or lambda is 0):
//   L_var = -lambda (1/L) sum_l (1/p') sum_i var(a^l_i)
// summaries[l][dir] holds the batch's summary vectors for layer l and one
// direction; the two directions' per-feature variances are averaged within
// the layer term.
Tensor variance_penalty(
    Graph* g,
    const std::vector<std::array<std::vector<Tensor>, 2>>& summaries,
    double lambda, Index summary_size);

}  // namespace dln

#endif  // DLN_ADAPT_H_
