// dln/norm.h

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

#ifndef DLN_NORM_H_
#define DLN_NORM_H_

#include "dln/tensor.h"

namespace dln {

// Scale (alpha) and shift (beta) of one layer-norm application.
struct LnParams {
  Array scale;
  Array shift;
};

struct LnConfig {
  double eps = 1e-5;  // added under the square root of sigma
};

struct LnStats {
  double mu = 0.0;
  double sigma = 0.0;  // sqrt(population variance + eps)
};

// Mean and stabilized standard deviation of x.
LnStats ln_stats(const double* x, Index n, double eps);
LnStats ln_stats(const Array& x, double eps);

// y = scale (.) (x - mu)/sigma + shift.
//
// x may be a vector (one normalization) or a matrix (each row normalized
// independently with the same scale/shift). Differentiable in x, scale and
// shift. scale/shift must be vectors of length equal to the normalized axis.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  const LnConfig& cfg);

// Non-graph convenience used by callers that only need values.
Array layer_norm(const Array& x, const LnParams& p, const LnConfig& cfg);

}  // namespace dln

#endif  // DLN_NORM_H_
