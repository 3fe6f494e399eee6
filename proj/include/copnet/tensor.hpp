#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "copnet/rng.hpp"

namespace copnet {

// Dense shapes: rank 0 (scalar), 1 (vector) or 2 (matrix, row-major).
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {
struct TensorNode;
}

// Value-semantic handle to a node in a reverse-mode computation graph.
// Values are 64-bit floats. Leaves created with param() accumulate gradients;
// everything downstream of a parameter propagates them. Nodes are immutable
// once consumed by an operation; the optimizer mutates leaf values only
// between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  // Gradient-accumulating leaf (a trainable parameter).
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const&;
  Shape shape() && { return shape(); }
  int rank() const;
  std::int64_t numel() const;

  // The rvalue overloads copy, so reading off a temporary is safe.
  const std::vector<double>& values() const&;
  std::vector<double> values() && { return values(); }
  // In-place value access for optimizer updates; only valid on leaves.
  std::vector<double>& mutable_values();

  // Scalar accessor; ContractError unless numel() == 1.
  double value() const;

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const&;
  std::vector<double> grad() && { return grad(); }
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }

 private:
  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(detail::TensorNode&)>);
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needs_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

// --- operations ------------------------------------------------------------

// Builds a graph node: forward values plus a closure that scatters gradients
// to the parents. The extension point every operation below goes through.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backward_fn);

// Matrix product. a is [m,k] (or [k], treated as a row vector), b is [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x*W + b. x is [d_in] or [B,d_in]; W is [d_in,d_out]; b is [d_out],
// broadcast over rows.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise max(x, 0); subgradient 0 at the kink.
Tensor relu(const Tensor& x);

// Shift-stable softmax; over the whole vector for rank 1, per row for rank 2.
Tensor softmax(const Tensor& x);

// Elementwise log(sigmoid(x)) via min(x,0) - log1p(exp(-|x|)); finite for all
// finite inputs.
Tensor log_sigmoid(const Tensor& x);

// -log softmax(scores)[target] for a rank-1 score vector.
Tensor cross_entropy(const Tensor& scores, int target);

// Mean over rows of -log softmax(row)[target[row]] for rank-2 scores.
Tensor ce_mean(const Tensor& scores, const std::vector<int>& targets);

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise, same shape
Tensor addn(const std::vector<Tensor>& xs);          // left-to-right sum
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor scale_rows(const Tensor& x, const Tensor& s);  // [B,n] rows scaled by s[B]
Tensor scale_by(const Tensor& x, const Tensor& s);    // x scaled by rank-0 s
Tensor column(const Tensor& x, int j);                // [B,N] -> [B]
Tensor element(const Tensor& x, int i);               // rank-1 -> rank-0
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Copy of x outside the gradient graph.
Tensor detach(const Tensor& x);

// Forward takes the given hard values; backward passes gradients to `soft`
// unchanged. The straight-through substitution for discrete choices.
Tensor straight_through(std::vector<double> hard, const Tensor& soft);

// Populates grad on every gradient-requiring tensor reachable from `loss`.
// Repeated calls accumulate additively; reset with zero_grad().
void backward(const Tensor& loss);

// i.i.d. standard Gumbel(0,1) samples; a constant (no gradient).
Tensor sample_gumbel(RngState& rng, Shape shape);

// Index of the largest value; ties resolved to the lowest index.
int argmax(const std::vector<double>& v);

}  // namespace copnet
