// tensor.cc

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

#include "dln/tensor.h"

#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

namespace dln {

void fail(const std::string& msg) { throw Error(msg); }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index e : s) n *= e;
  return n;
}

// ---- Array ------------------------------------------------------------------

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  for (Index e : shape_)
    if (e <= 0) fail("Array: non-positive extent in shape " + shape_str(shape_));
  data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (Index e : shape_)
    if (e <= 0) fail("Array: non-positive extent in shape " + shape_str(shape_));
  if (shape_size(shape_) != static_cast<Index>(data_.size()))
    fail("Array: shape " + shape_str(shape_) + " does not match data length " +
         std::to_string(data_.size()));
}

Array Array::scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

Array Array::vec(std::vector<double> v) {
  Index n = static_cast<Index>(v.size());
  return Array(Shape{n}, std::move(v));
}

Array Array::mat(Index rows, Index cols, std::vector<double> v) {
  return Array(Shape{rows, cols}, std::move(v));
}

Index Array::rows() const {
  if (rank() != 2) fail("Array::rows on rank-" + std::to_string(rank()));
  return shape_[0];
}

Index Array::cols() const {
  if (rank() != 2) fail("Array::cols on rank-" + std::to_string(rank()));
  return shape_[1];
}

double& Array::at(Index r, Index c) {
  return data_[static_cast<std::size_t>(r * cols() + c)];
}

double Array::at(Index r, Index c) const {
  return data_[static_cast<std::size_t>(r * cols() + c)];
}

double Array::scalar_value() const {
  if (size() != 1) fail("scalar_value on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- Node / Graph -----------------------------------------------------------

namespace internal {

double* Node::grad_slot() {
  if (grad.empty()) grad = Array(value.shape(), 0.0);
  return grad.data();
}

void Node::add_grad(const double* g, Index n) {
  double* dst = grad_slot();
  for (Index i = 0; i < n; ++i) dst[i] += g[i];
}

void Node::add_grad_at(Index offset, const double* g, Index n) {
  double* dst = grad_slot() + offset;
  for (Index i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace internal

using internal::Node;

const Array& Tensor::value() const {
  if (!node_) fail("use of an undefined Tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Graph::check_open(const char* op_tag) const {
  if (consumed_)
    fail(std::string(op_tag) + ": graph already consumed by backward()");
}

Node* Graph::alloc(Array value, bool requires_grad, const char* op_tag) {
  check_open(op_tag);
  if (!value.all_finite())
    fail(std::string(op_tag) + ": non-finite values in result");
  nodes_.emplace_back();
  Node* n = &nodes_.back();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Graph::leaf(const Array& value, bool requires_grad) {
  return Tensor(this, alloc(value, requires_grad, "leaf"));
}

void Graph::backward(const Tensor& seed) {
  check_open("backward");
  if (OpAccess::graph(seed) != this) fail("backward: seed from another graph");
  if (seed.rank() != 0) fail("backward: seed is not a scalar");
  consumed_ = true;
  Node* s = OpAccess::node(seed);
  s->grad_slot()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.requires_grad && n.grad_live() && n.backprop) n.backprop();
  }
}

const Array& Graph::grad(const Tensor& t) {
  if (OpAccess::graph(t) != this) fail("grad: tensor from another graph");
  Node* n = OpAccess::node(t);
  if (!n->grad_live()) n->grad_slot();  // untouched => exact zeros
  return n->grad;
}

Graph* OpAccess::common_graph(std::initializer_list<Tensor> ts,
                              const char* op_tag) {
  Graph* g = nullptr;
  for (const Tensor& t : ts) {
    if (!t.defined()) fail(std::string(op_tag) + ": undefined operand");
    if (!g) g = t.graph_;
    if (t.graph_ != g)
      fail(std::string(op_tag) + ": operands from different graphs");
  }
  g->check_open(op_tag);
  return g;
}

namespace {

bool any_grad(std::initializer_list<Tensor> ts) {
  for (const Tensor& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace

// ---- matmul -----------------------------------------------------------------

namespace {

// Row-major product of (m,k) by (k,n) into (m,n). Inner loop runs over k in
// ascending order so every code path that multiplies the same operands sums
// in the same order.
void gemm(const double* a, const double* b, double* y, Index m, Index k,
          Index n) {
  for (Index i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* yi = y + i * n;
    for (Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Index p = 0; p < k; ++p) acc += ai[p] * b[p * n + j];
      yi[j] = acc;
    }
  }
}

// (m,k) by (n,k)^T into (m,n); both operands walked contiguously.
void gemm_nt(const double* a, const double* b, double* y, Index m, Index k,
             Index n) {
  for (Index i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* yi = y + i * n;
    for (Index j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (Index p = 0; p < k; ++p) acc += ai[p] * bj[p];
      yi[j] = acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph* g = OpAccess::common_graph({a, b}, "matmul");
  const Array& av = a.value();
  const Array& bv = b.value();
  Index m, k, n;
  Shape out_shape;
  if (av.rank() == 2 && bv.rank() == 2) {
    m = av.rows(); k = av.cols(); n = bv.cols();
    if (bv.rows() != k)
      fail("matmul: inner extents disagree, " + shape_str(av.shape()) + " x " +
           shape_str(bv.shape()));
    out_shape = {m, n};
  } else if (av.rank() == 2 && bv.rank() == 1) {
    m = av.rows(); k = av.cols(); n = 1;
    if (bv.size() != k)
      fail("matmul: matrix " + shape_str(av.shape()) + " with vector [" +
           std::to_string(bv.size()) + "]");
    out_shape = {m};
  } else if (av.rank() == 1 && bv.rank() == 2) {
    m = 1; k = av.size(); n = bv.cols();
    if (bv.rows() != k)
      fail("matmul: vector [" + std::to_string(av.size()) + "] with matrix " +
           shape_str(bv.shape()));
    out_shape = {n};
  } else {
    fail("matmul: unsupported ranks " + shape_str(av.shape()) + " x " +
         shape_str(bv.shape()));
  }

  Array y(out_shape);
  gemm(av.data(), bv.data(), y.data(), m, k, n);

  bool rg = any_grad({a, b});
  Node* out = OpAccess::alloc(g, std::move(y), rg, "matmul");
  if (rg) {
    Node* an = OpAccess::node(a);
    Node* bn = OpAccess::node(b);
    out->backprop = [an, bn, out, m, k, n]() {
      const double* gy = out->grad.data();
      if (an->requires_grad) {
        // dA = gY * B^T
        double* da = an->grad_slot();
        const double* bd = bn->value.data();
        for (Index i = 0; i < m; ++i)
          for (Index p = 0; p < k; ++p) {
            double acc = 0.0;
            for (Index j = 0; j < n; ++j) acc += gy[i * n + j] * bd[p * n + j];
            da[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        // dB = A^T * gY
        double* db = bn->grad_slot();
        const double* ad = an->value.data();
        for (Index p = 0; p < k; ++p)
          for (Index j = 0; j < n; ++j) {
            double acc = 0.0;
            for (Index i = 0; i < m; ++i) acc += ad[i * k + p] * gy[i * n + j];
            db[p * n + j] += acc;
          }
      }
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  Graph* g = OpAccess::common_graph({a, b}, "matmul_nt");
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2)
    fail("matmul_nt: expects two matrices, got " + shape_str(av.shape()) +
         " and " + shape_str(bv.shape()));
  Index m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k)
    fail("matmul_nt: inner extents disagree, " + shape_str(av.shape()) +
         " x " + shape_str(bv.shape()) + "^T");

  Array y(Shape{m, n});
  gemm_nt(av.data(), bv.data(), y.data(), m, k, n);

  bool rg = any_grad({a, b});
  Node* out = OpAccess::alloc(g, std::move(y), rg, "matmul_nt");
  if (rg) {
    Node* an = OpAccess::node(a);
    Node* bn = OpAccess::node(b);
    out->backprop = [an, bn, out, m, k, n]() {
      const double* gy = out->grad.data();
      if (an->requires_grad) {
        // dA = gY * B
        double* da = an->grad_slot();
        const double* bd = bn->value.data();
        for (Index i = 0; i < m; ++i)
          for (Index p = 0; p < k; ++p) {
            double acc = 0.0;
            for (Index j = 0; j < n; ++j) acc += gy[i * n + j] * bd[j * k + p];
            da[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        // dB = gY^T * A
        double* db = bn->grad_slot();
        const double* ad = an->value.data();
        for (Index j = 0; j < n; ++j)
          for (Index p = 0; p < k; ++p) {
            double acc = 0.0;
            for (Index i = 0; i < m; ++i) acc += gy[i * n + j] * ad[i * k + p];
            db[j * k + p] += acc;
          }
      }
    };
  }
  return OpAccess::wrap(g, out);
}

// ---- elementwise ------------------------------------------------------------

namespace {

enum class BinTag { kAdd, kSub, kMul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinTag tag,
                 const char* name) {
  Graph* g = OpAccess::common_graph({a, b}, name);
  const Array& av = a.value();
  const Array& bv = b.value();

  // mul additionally supports scalar*tensor broadcast.
  bool a_scalar = av.rank() == 0, b_scalar = bv.rank() == 0;
  bool broadcast = tag == BinTag::kMul && (a_scalar != b_scalar);
  if (!broadcast && !av.same_shape(bv))
    fail(std::string(name) + ": shape mismatch " + shape_str(av.shape()) +
         " vs " + shape_str(bv.shape()));

  const Array& big = a_scalar && broadcast ? bv : av;
  Array y(big.shape());
  Index nel = big.size();
  const double* ad = av.data();
  const double* bd = bv.data();
  double* yd = y.data();
  switch (tag) {
    case BinTag::kAdd:
      for (Index i = 0; i < nel; ++i) yd[i] = ad[i] + bd[i];
      break;
    case BinTag::kSub:
      for (Index i = 0; i < nel; ++i) yd[i] = ad[i] - bd[i];
      break;
    case BinTag::kMul:
      if (!broadcast) {
        for (Index i = 0; i < nel; ++i) yd[i] = ad[i] * bd[i];
      } else if (a_scalar) {
        for (Index i = 0; i < nel; ++i) yd[i] = ad[0] * bd[i];
      } else {
        for (Index i = 0; i < nel; ++i) yd[i] = ad[i] * bd[0];
      }
      break;
  }

  bool rg = any_grad({a, b});
  Node* out = OpAccess::alloc(g, std::move(y), rg, name);
  if (rg) {
    Node* an = OpAccess::node(a);
    Node* bn = OpAccess::node(b);
    out->backprop = [an, bn, out, tag, broadcast, a_scalar, nel]() {
      const double* gy = out->grad.data();
      switch (tag) {
        case BinTag::kAdd:
          if (an->requires_grad) an->add_grad(gy, nel);
          if (bn->requires_grad) bn->add_grad(gy, nel);
          break;
        case BinTag::kSub:
          if (an->requires_grad) an->add_grad(gy, nel);
          if (bn->requires_grad) {
            double* db = bn->grad_slot();
            for (Index i = 0; i < nel; ++i) db[i] -= gy[i];
          }
          break;
        case BinTag::kMul: {
          const double* ad = an->value.data();
          const double* bd = bn->value.data();
          if (!broadcast) {
            if (an->requires_grad) {
              double* da = an->grad_slot();
              for (Index i = 0; i < nel; ++i) da[i] += gy[i] * bd[i];
            }
            if (bn->requires_grad) {
              double* db = bn->grad_slot();
              for (Index i = 0; i < nel; ++i) db[i] += gy[i] * ad[i];
            }
          } else {
            Node* sn = a_scalar ? an : bn;   // scalar side
            Node* tn = a_scalar ? bn : an;   // tensor side
            const double sv = sn->value.data()[0];
            const double* td = tn->value.data();
            if (tn->requires_grad) {
              double* dt = tn->grad_slot();
              for (Index i = 0; i < nel; ++i) dt[i] += gy[i] * sv;
            }
            if (sn->requires_grad) {
              double acc = 0.0;
              for (Index i = 0; i < nel; ++i) acc += gy[i] * td[i];
              sn->add_grad(&acc, 1);
            }
          }
          break;
        }
      }
    };
  }
  return OpAccess::wrap(g, out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinTag::kAdd, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinTag::kSub, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinTag::kMul, "mul");
}

Tensor tanh(const Tensor& a) {
  Graph* g = OpAccess::common_graph({a}, "tanh");
  const Array& av = a.value();
  Array y(av.shape());
  Index nel = av.size();
  for (Index i = 0; i < nel; ++i) y[i] = std::tanh(av[i]);
  bool rg = a.requires_grad();
  Node* out = OpAccess::alloc(g, std::move(y), rg, "tanh");
  if (rg) {
    Node* an = OpAccess::node(a);
    out->backprop = [an, out, nel]() {
      const double* gy = out->grad.data();
      const double* yv = out->value.data();
      double* da = an->grad_slot();
      for (Index i = 0; i < nel; ++i) da[i] += gy[i] * (1.0 - yv[i] * yv[i]);
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor sigmoid(const Tensor& a) {
  Graph* g = OpAccess::common_graph({a}, "sigmoid");
  const Array& av = a.value();
  Array y(av.shape());
  Index nel = av.size();
  for (Index i = 0; i < nel; ++i) {
    double x = av[i];
    // Evaluate on the negative branch to avoid exp overflow.
    y[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  bool rg = a.requires_grad();
  Node* out = OpAccess::alloc(g, std::move(y), rg, "sigmoid");
  if (rg) {
    Node* an = OpAccess::node(a);
    out->backprop = [an, out, nel]() {
      const double* gy = out->grad.data();
      const double* yv = out->value.data();
      double* da = an->grad_slot();
      for (Index i = 0; i < nel; ++i) da[i] += gy[i] * yv[i] * (1.0 - yv[i]);
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor scale(const Tensor& a, double c) {
  Graph* g = OpAccess::common_graph({a}, "scale");
  const Array& av = a.value();
  Array y(av.shape());
  Index nel = av.size();
  for (Index i = 0; i < nel; ++i) y[i] = c * av[i];
  bool rg = a.requires_grad();
  Node* out = OpAccess::alloc(g, std::move(y), rg, "scale");
  if (rg) {
    Node* an = OpAccess::node(a);
    out->backprop = [an, out, c, nel]() {
      const double* gy = out->grad.data();
      double* da = an->grad_slot();
      for (Index i = 0; i < nel; ++i) da[i] += c * gy[i];
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  Graph* g = OpAccess::common_graph({m, v}, "add_rowvec");
  const Array& mv = m.value();
  const Array& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 1 || vv.size() != mv.cols())
    fail("add_rowvec: shapes " + shape_str(mv.shape()) + " + " +
         shape_str(vv.shape()));
  Index t = mv.rows(), n = mv.cols();
  Array y(mv.shape());
  for (Index i = 0; i < t; ++i)
    for (Index j = 0; j < n; ++j) y.at(i, j) = mv.at(i, j) + vv[j];
  bool rg = any_grad({m, v});
  Node* out = OpAccess::alloc(g, std::move(y), rg, "add_rowvec");
  if (rg) {
    Node* mn = OpAccess::node(m);
    Node* vn = OpAccess::node(v);
    out->backprop = [mn, vn, out, t, n]() {
      const double* gy = out->grad.data();
      if (mn->requires_grad) mn->add_grad(gy, t * n);
      if (vn->requires_grad) {
        double* dv = vn->grad_slot();
        for (Index i = 0; i < t; ++i)
          for (Index j = 0; j < n; ++j) dv[j] += gy[i * n + j];
      }
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor row(const Tensor& m, Index r) {
  Graph* g = OpAccess::common_graph({m}, "row");
  const Array& mv = m.value();
  if (mv.rank() != 2) fail("row: expects a matrix");
  if (r < 0 || r >= mv.rows())
    fail("row: index " + std::to_string(r) + " out of range [0," +
         std::to_string(mv.rows()) + ")");
  Index n = mv.cols();
  std::vector<double> d(mv.data() + r * n, mv.data() + (r + 1) * n);
  bool rg = m.requires_grad();
  Node* out = OpAccess::alloc(g, Array::vec(std::move(d)), rg, "row");
  if (rg) {
    Node* mn = OpAccess::node(m);
    out->backprop = [mn, out, r, n]() {
      mn->add_grad_at(r * n, out->grad.data(), n);
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) fail("stack_rows: empty row list");
  Graph* g = OpAccess::graph(rows[0]);
  Index n = rows[0].size();
  bool rg = false;
  for (const Tensor& t : rows) {
    if (OpAccess::graph(t) != g) fail("stack_rows: mixed graphs");
    if (t.rank() != 1 || t.size() != n)
      fail("stack_rows: rows must be equal-length vectors");
    rg = rg || t.requires_grad();
  }
  Index t_rows = static_cast<Index>(rows.size());
  Array y(Shape{t_rows, n});
  for (Index i = 0; i < t_rows; ++i)
    std::memcpy(y.data() + i * n, rows[static_cast<std::size_t>(i)].value().data(),
                static_cast<std::size_t>(n) * sizeof(double));
  Node* out = OpAccess::alloc(g, std::move(y), rg, "stack_rows");
  if (rg) {
    std::vector<Node*> parents;
    parents.reserve(rows.size());
    for (const Tensor& t : rows) parents.push_back(OpAccess::node(t));
    out->backprop = [parents = std::move(parents), out, n]() {
      const double* gy = out->grad.data();
      for (std::size_t i = 0; i < parents.size(); ++i)
        if (parents[i]->requires_grad)
          parents[i]->add_grad(gy + static_cast<Index>(i) * n, n);
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  Graph* g = OpAccess::common_graph({a, b}, "hconcat");
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows())
    fail("hconcat: shapes " + shape_str(av.shape()) + " | " +
         shape_str(bv.shape()));
  Index t = av.rows(), n1 = av.cols(), n2 = bv.cols();
  Array y(Shape{t, n1 + n2});
  for (Index i = 0; i < t; ++i) {
    std::memcpy(y.data() + i * (n1 + n2), av.data() + i * n1,
                static_cast<std::size_t>(n1) * sizeof(double));
    std::memcpy(y.data() + i * (n1 + n2) + n1, bv.data() + i * n2,
                static_cast<std::size_t>(n2) * sizeof(double));
  }
  bool rg = any_grad({a, b});
  Node* out = OpAccess::alloc(g, std::move(y), rg, "hconcat");
  if (rg) {
    Node* an = OpAccess::node(a);
    Node* bn = OpAccess::node(b);
    out->backprop = [an, bn, out, t, n1, n2]() {
      const double* gy = out->grad.data();
      if (an->requires_grad) {
        double* da = an->grad_slot();
        for (Index i = 0; i < t; ++i)
          for (Index j = 0; j < n1; ++j) da[i * n1 + j] += gy[i * (n1 + n2) + j];
      }
      if (bn->requires_grad) {
        double* db = bn->grad_slot();
        for (Index i = 0; i < t; ++i)
          for (Index j = 0; j < n2; ++j)
            db[i * n2 + j] += gy[i * (n1 + n2) + n1 + j];
      }
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor weighted_rowsum(const Tensor& m, const Array& w) {
  Graph* g = OpAccess::common_graph({m}, "weighted_rowsum");
  const Array& mv = m.value();
  if (mv.rank() != 2 || w.rank() != 1 || w.size() != mv.rows())
    fail("weighted_rowsum: matrix " + shape_str(mv.shape()) +
         " with weights " + shape_str(w.shape()));
  Index t = mv.rows(), n = mv.cols();
  Array y(Shape{n});
  for (Index i = 0; i < t; ++i) {
    const double wi = w[i];
    if (wi == 0.0) continue;
    for (Index j = 0; j < n; ++j) y[j] += wi * mv.at(i, j);
  }
  bool rg = m.requires_grad();
  Node* out = OpAccess::alloc(g, std::move(y), rg, "weighted_rowsum");
  if (rg) {
    Node* mn = OpAccess::node(m);
    out->backprop = [mn, out, w, t, n]() {
      const double* gy = out->grad.data();
      double* dm = mn->grad_slot();
      for (Index i = 0; i < t; ++i) {
        const double wi = w[i];
        if (wi == 0.0) continue;
        for (Index j = 0; j < n; ++j) dm[i * n + j] += wi * gy[j];
      }
    };
  }
  return OpAccess::wrap(g, out);
}

Tensor sum(const Tensor& a) {
  Graph* g = OpAccess::common_graph({a}, "sum");
  const Array& av = a.value();
  double acc = 0.0;
  Index nel = av.size();
  for (Index i = 0; i < nel; ++i) acc += av[i];
  bool rg = a.requires_grad();
  Node* out = OpAccess::alloc(g, Array::scalar(acc), rg, "sum");
  if (rg) {
    Node* an = OpAccess::node(a);
    out->backprop = [an, out, nel]() {
      const double gy = out->grad.data()[0];
      double* da = an->grad_slot();
      for (Index i = 0; i < nel; ++i) da[i] += gy;
    };
  }
  return OpAccess::wrap(g, out);
}

// ---- grad_check ---------------------------------------------------------------

GradCheckReport grad_check(
    const std::function<Tensor(Graph*, const std::vector<Tensor>&)>& loss_fn,
    std::vector<Array>* params, const std::vector<std::string>& names,
    double h) {
  if (h <= 0.0) fail("grad_check: step must be positive");
  if (params->size() != names.size())
    fail("grad_check: parameter/name count mismatch");

  auto eval = [&](bool with_grad, std::vector<Array>* grads_out) -> double {
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(params->size());
    for (const Array& p : *params) leaves.push_back(g.leaf(p, with_grad));
    Tensor loss = loss_fn(&g, leaves);
    if (loss.rank() != 0) fail("grad_check: loss is not a scalar");
    double v = loss.scalar_value();
    if (!std::isfinite(v)) fail("grad_check: non-finite loss at probe point");
    if (with_grad) {
      g.backward(loss);
      grads_out->clear();
      for (const Tensor& leaf : leaves) grads_out->push_back(g.grad(leaf));
    }
    return v;
  };

  std::vector<Array> analytic;
  eval(true, &analytic);

  GradCheckReport rep;
  for (std::size_t p = 0; p < params->size(); ++p) {
    Array& theta = (*params)[p];
    for (Index i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double fp = eval(false, nullptr);
      theta[i] = saved - h;
      const double fm = eval(false, nullptr);
      theta[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom =
          std::max(std::max(std::fabs(a), std::fabs(numeric)), 1e-8);
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = names[p];
        rep.worst_index = i;
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace dln
