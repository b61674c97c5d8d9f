// norm.cc

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

#include "dln/norm.h"

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

namespace dln {

using internal::Node;

LnStats ln_stats(const double* x, Index n, double eps) {
  if (n < 1) fail("ln_stats: empty vector");
  double mu = 0.0;
  for (Index i = 0; i < n; ++i) mu += x[i];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = x[i] - mu;
    var += d * d;
  }
  var /= static_cast<double>(n);
  return LnStats{mu, std::sqrt(var + eps)};
}

LnStats ln_stats(const Array& x, double eps) {
  if (x.rank() != 1) fail("ln_stats: expects a vector");
  return ln_stats(x.data(), x.size(), eps);
}

namespace {

// Forward for one row; emits y and records xhat = (x-mu)/sigma.
void ln_row(const double* x, Index n, const double* s, const double* b,
            double eps, double* y, double* xhat, double* sigma_out) {
  LnStats st = ln_stats(x, n, eps);
  for (Index i = 0; i < n; ++i) {
    xhat[i] = (x[i] - st.mu) / st.sigma;
    y[i] = s[i] * xhat[i] + b[i];
  }
  *sigma_out = st.sigma;
}

// Backward for one row. With w = gy (.) s:
//   dx = (w - mean(w) - xhat * mean(w (.) xhat)) / sigma
void ln_row_back(const double* gy, const double* s, const double* xhat,
                 double sigma, Index n, double* dx, double* ds, double* db) {
  double mean_w = 0.0, mean_wx = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = gy[i] * s[i];
    mean_w += w;
    mean_wx += w * xhat[i];
  }
  mean_w /= static_cast<double>(n);
  mean_wx /= static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    const double w = gy[i] * s[i];
    if (dx) dx[i] += (w - mean_w - xhat[i] * mean_wx) / sigma;
    if (ds) ds[i] += gy[i] * xhat[i];
    if (db) db[i] += gy[i];
  }
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  const LnConfig& cfg) {
  Graph* g = OpAccess::common_graph({x, scale, shift}, "layer_norm");
  if (cfg.eps < 0.0) fail("layer_norm: negative eps");
  const Array& xv = x.value();
  const Array& sv = scale.value();
  const Array& bv = shift.value();
  if (xv.rank() != 1 && xv.rank() != 2)
    fail("layer_norm: input must be a vector or matrix");
  const Index n = xv.rank() == 1 ? xv.size() : xv.cols();
  const Index rows = xv.rank() == 1 ? 1 : xv.rows();
  if (sv.rank() != 1 || bv.rank() != 1 || sv.size() != n || bv.size() != n)
    fail("layer_norm: scale/shift length mismatch, input " +
         shape_str(xv.shape()) + ", scale " + shape_str(sv.shape()) +
         ", shift " + shape_str(bv.shape()));

  Array y(xv.shape());
  auto xhat = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(rows * n));
  auto sigmas = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r)
    ln_row(xv.data() + r * n, n, sv.data(), bv.data(), cfg.eps,
           y.data() + r * n, xhat->data() + r * n, &(*sigmas)[r]);
  if (!y.all_finite()) fail("layer_norm: non-finite values in result");

  bool rg = x.requires_grad() || scale.requires_grad() || shift.requires_grad();
  Node* out = OpAccess::alloc(g, std::move(y), rg, "layer_norm");
  if (rg) {
    Node* xn = OpAccess::node(x);
    Node* sn = OpAccess::node(scale);
    Node* bn = OpAccess::node(shift);
    out->backprop = [xn, sn, bn, out, xhat, sigmas, rows, n]() {
      double* dx = xn->requires_grad ? xn->grad_slot() : nullptr;
      double* ds = sn->requires_grad ? sn->grad_slot() : nullptr;
      double* db = bn->requires_grad ? bn->grad_slot() : nullptr;
      const double* gy = out->grad.data();
      for (Index r = 0; r < rows; ++r)
        ln_row_back(gy + r * n, sn->value.data(), xhat->data() + r * n,
                    (*sigmas)[r], n, dx ? dx + r * n : nullptr, ds, db);
    };
  }
  return OpAccess::wrap(g, out);
}

Array layer_norm(const Array& x, const LnParams& p, const LnConfig& cfg) {
  if (x.rank() != 1) fail("layer_norm: expects a vector");
  if (p.scale.size() != x.size() || p.shift.size() != x.size())
    fail("layer_norm: scale/shift length mismatch");
  Array y(x.shape());
  std::vector<double> xhat(static_cast<std::size_t>(x.size()));
  double sigma;
  ln_row(x.data(), x.size(), p.scale.data(), p.shift.data(), cfg.eps, y.data(),
         xhat.data(), &sigma);
  if (!y.all_finite()) fail("layer_norm: non-finite values in result");
  return y;
}

}  // namespace dln
