// dln/tensor.h

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

#ifndef DLN_TENSOR_H_
#define DLN_TENSOR_H_

#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dln {

// All errors raised by the library derive from Error.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void fail(const std::string& msg);

using Index = std::int64_t;

// Extents of a dense row-major array. Rank 0 (scalar), 1 (vector) and
// 2 (matrix) are the only ranks the library uses.
using Shape = std::vector<Index>;

std::string shape_str(const Shape& s);
Index shape_size(const Shape& s);

// Dense 64-bit float value. Plain data, no gradient tracking; the Graph
// below wraps Arrays into differentiable nodes.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v);
  static Array vec(std::vector<double> v);
  static Array mat(Index rows, Index cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return static_cast<Index>(data_.size()); }
  Index rows() const;
  Index cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(Index r, Index c);
  double at(Index r, Index c) const;
  double scalar_value() const;

  bool empty() const { return data_.empty() && shape_.empty(); }
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Graph;

namespace internal {

// One recorded primitive operation (or leaf/constant). Nodes live in their
// Graph and are addressed by stable pointers.
struct Node {
  Array value;
  Array grad;  // empty until the first accumulation reaches this node
  bool requires_grad = false;
  std::function<void()> backprop;  // set only when requires_grad

  // Accumulates g (length value.size()) into grad, allocating zeros first.
  void add_grad(const double* g, Index n);
  void add_grad_at(Index offset, const double* g, Index n);
  double* grad_slot();  // allocate-if-needed, returns raw grad storage
  bool grad_live() const { return !grad.empty(); }
};

}  // namespace internal

// Handle to a node on a Graph. Cheap to copy; valid while the Graph lives.
class Tensor {
 public:
  Tensor() = default;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  Index rank() const { return value().rank(); }
  Index size() const { return value().size(); }
  double scalar_value() const { return value().scalar_value(); }
  bool requires_grad() const;
  bool defined() const { return node_ != nullptr; }

 private:
  friend class Graph;
  friend struct OpAccess;
  Tensor(Graph* g, internal::Node* n) : graph_(g), node_(n) {}
  Graph* graph_ = nullptr;
  internal::Node* node_ = nullptr;
};

// Reverse-mode tape. Nodes are recorded in construction order, which is a
// topological order; backward() walks it once in reverse. A Graph is
// single-threaded and is consumed by backward().
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor leaf(const Array& value, bool requires_grad = true);
  Tensor constant(const Array& value) { return leaf(value, false); }
  Tensor constant(double v) { return leaf(Array::scalar(v), false); }

  // Seeds d(seed)=1 and propagates to every reachable node. The seed must
  // be a scalar; a Graph can only be run backward once.
  void backward(const Tensor& seed);

  // Gradient of the last backward() with respect to t. Leaves (and nodes)
  // the seed does not reach report exactly-zero gradients.
  const Array& grad(const Tensor& t);

  std::size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend struct OpAccess;
  internal::Node* alloc(Array value, bool requires_grad, const char* op_tag);
  void check_open(const char* op_tag) const;

  std::deque<internal::Node> nodes_;
  bool consumed_ = false;
};

// Internal access used by the op implementations across compilation units.
struct OpAccess {
  static internal::Node* node(const Tensor& t) { return t.node_; }
  static Graph* graph(const Tensor& t) { return t.graph_; }
  static Tensor wrap(Graph* g, internal::Node* n) { return Tensor(g, n); }
  static internal::Node* alloc(Graph* g, Array value, bool requires_grad,
                               const char* op_tag) {
    return g->alloc(std::move(value), requires_grad, op_tag);
  }
  // Verifies operands share one open graph and returns it.
  static Graph* common_graph(std::initializer_list<Tensor> ts,
                             const char* op_tag);
};

// ---- Primitive operations -------------------------------------------------
// Every primitive validates shapes, checks the result for non-finite values
// and registers a backward closure when any operand requires gradients.

Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k)x(k,n); also matrix*vector and vector*matrix
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // A * B^T for (m,k) and (n,k)

Tensor add(const Tensor& a, const Tensor& b);  // equal shapes
Tensor sub(const Tensor& a, const Tensor& b);  // equal shapes
Tensor mul(const Tensor& a, const Tensor& b);  // equal shapes, or scalar*tensor
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor scale(const Tensor& a, double c);            // constant scalar multiply
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // (t,n) + broadcast (n)
Tensor row(const Tensor& m, Index r);               // matrix row as a vector
Tensor stack_rows(const std::vector<Tensor>& rows);  // vectors -> matrix
Tensor hconcat(const Tensor& a, const Tensor& b);   // (t,n1)|(t,n2) -> (t,n1+n2)
Tensor weighted_rowsum(const Tensor& m, const Array& w);  // sum_t w[t]*m[t,:]
Tensor sum(const Tensor& a);  // all elements -> scalar

// ---- Gradient checking ------------------------------------------------------

// Re-evaluates loss_fn on freshly bound leaves; the analytic gradient from
// one backward pass is compared with a central finite difference for every
// parameter coordinate. Returns the worst relative error, with relative
// error |a - n| / max(|a|, |n|, 1e-8).
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

GradCheckReport grad_check(
    const std::function<Tensor(Graph*, const std::vector<Tensor>&)>& loss_fn,
    std::vector<Array>* params, const std::vector<std::string>& names,
    double h);

}  // namespace dln

#endif  // DLN_TENSOR_H_
