#include "copnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "copnet/common.hpp"

namespace copnet {

using detail::TensorNode;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Row-major [m,k] x [k,n] accumulating into c.
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += G * B^T, G is [m,n], B is [k,n], dA is [m,k].
void matmul_grad_a(const double* g, const double* b, double* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* grow = g + static_cast<std::size_t>(i) * n;
    double* darow = da + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB += A^T * G, A is [m,k], G is [m,n], dB is [k,n].
void matmul_grad_b(const double* a, const double* g, double* db, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* grow = g + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      double* dbrow = db + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

double logsumexp(const double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

void softmax_row(const double* x, double* p, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(x[i] - mx);
    s += p[i];
  }
  const double inv = 1.0 / s;
  for (int i = 0; i < n; ++i) p[i] *= inv;
}

}  // namespace

// --- Tensor handle ----------------------------------------------------------

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
  Tensor t;
  auto n = new_node(std::move(shape), std::move(values));
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.node()->needs_grad;
  if (needs) {
    n->needs_grad = true;
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node_);
    n->backward_fn = std::move(backward_fn);
  }
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t;
  auto n = std::make_shared<TensorNode>();
  std::int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->values.assign(static_cast<std::size_t>(count), v);
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  Tensor t;
  t.node_ = new_node(std::move(shape), std::move(values));
  return t;
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->needs_grad = true;
  return t;
}

const Shape& Tensor::shape() const& { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->values.size()); }
const std::vector<double>& Tensor::values() const& { return node_->values; }

std::vector<double>& Tensor::mutable_values() {
  if (!node_->parents.empty())
    throw ContractError("mutable_values: only leaf tensors may be mutated");
  return node_->values;
}

double Tensor::value() const {
  if (node_->values.size() != 1)
    throw ContractError("value: tensor of shape " + shape_str(node_->shape) +
                        " is not a scalar");
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const& {
  if (node_->grad.empty())
    throw ContractError("grad: no gradient has been accumulated");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

// --- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2)
    throw ShapeError("matmul: rhs must be rank 2, got " + shape_str(b.shape()));
  const bool vec = a.rank() == 1;
  if (!vec && a.rank() != 2)
    throw ShapeError("matmul: lhs must be rank 1 or 2, got " + shape_str(a.shape()));
  const int m = vec ? 1 : a.shape()[0];
  const int k = vec ? a.shape()[0] : a.shape()[1];
  const int n = b.shape()[1];
  if (k != b.shape()[0])
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));

  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  matmul_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  Shape oshape = vec ? Shape{n} : Shape{m, n};
  auto* an = a.node();
  auto* bn = b.node();
  return make_op(std::move(oshape), std::move(out), {a, b},
                 [an, bn, m, k, n](TensorNode& self) {
                   if (an->needs_grad)
                     matmul_grad_a(self.grad.data(), bn->values.data(),
                                   an->ensure_grad().data(), m, k, n);
                   if (bn->needs_grad)
                     matmul_grad_b(an->values.data(), self.grad.data(),
                                   bn->ensure_grad().data(), m, k, n);
                 });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || b.rank() != 1)
    throw ShapeError("affine: W must be rank 2 and b rank 1, got W=" +
                     shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  const bool vec = x.rank() == 1;
  if (!vec && x.rank() != 2)
    throw ShapeError("affine: x must be rank 1 or 2, got " + shape_str(x.shape()));
  const int m = vec ? 1 : x.shape()[0];
  const int k = vec ? x.shape()[0] : x.shape()[1];
  const int n = w.shape()[1];
  if (k != w.shape()[0] || n != b.shape()[0])
    throw ShapeError("affine: shapes disagree: x=" + shape_str(x.shape()) +
                     " W=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));

  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    std::copy(b.values().begin(), b.values().end(),
              out.begin() + static_cast<std::size_t>(i) * n);
  matmul_acc(x.values().data(), w.values().data(), out.data(), m, k, n);
  Shape oshape = vec ? Shape{n} : Shape{m, n};
  auto* xn = x.node();
  auto* wn = w.node();
  auto* bn = b.node();
  return make_op(std::move(oshape), std::move(out), {x, w, b},
                 [xn, wn, bn, m, k, n](TensorNode& self) {
                   if (xn->needs_grad)
                     matmul_grad_a(self.grad.data(), wn->values.data(),
                                   xn->ensure_grad().data(), m, k, n);
                   if (wn->needs_grad)
                     matmul_grad_b(xn->values.data(), self.grad.data(),
                                   wn->ensure_grad().data(), m, k, n);
                   if (bn->needs_grad) {
                     double* db = bn->ensure_grad().data();
                     const double* g = self.grad.data();
                     for (int i = 0; i < m; ++i)
                       for (int j = 0; j < n; ++j) db[j] += g[static_cast<std::size_t>(i) * n + j];
                   }
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  auto* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (std::size_t i = 0; i < self.values.size(); ++i)
      if (xn->values[i] > 0.0) dx[i] += self.grad[i];
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError("softmax: expected rank 1 or 2, got " + shape_str(x.shape()));
  const int rows = x.rank() == 2 ? x.shape()[0] : 1;
  const int n = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
  if (n < 1) throw ShapeError("softmax: empty input");
  std::vector<double> out(x.values().size());
  for (int r = 0; r < rows; ++r)
    softmax_row(x.values().data() + static_cast<std::size_t>(r) * n,
                out.data() + static_cast<std::size_t>(r) * n, n);
  auto* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, rows, n](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (int r = 0; r < rows; ++r) {
      const double* p = self.values.data() + static_cast<std::size_t>(r) * n;
      const double* g = self.grad.data() + static_cast<std::size_t>(r) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += p[j] * g[j];
      double* d = dx + static_cast<std::size_t>(r) * n;
      for (int j = 0; j < n; ++j) d[j] += p[j] * (g[j] - dot);
    }
  });
}

Tensor log_sigmoid(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = std::min(v, 0.0) - std::log1p(std::exp(-std::fabs(v)));
  }
  auto* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (std::size_t i = 0; i < self.values.size(); ++i) {
      const double v = xn->values[i];
      // d/dx log sigma(x) = sigma(-x), computed without overflow
      const double s = v >= 0.0 ? std::exp(-v) / (1.0 + std::exp(-v))
                                : 1.0 / (1.0 + std::exp(v));
      dx[i] += self.grad[i] * s;
    }
  });
}

Tensor cross_entropy(const Tensor& scores, int target) {
  if (scores.rank() != 1)
    throw ShapeError("cross_entropy: expected rank-1 scores, got " +
                     shape_str(scores.shape()));
  const int n = scores.shape()[0];
  if (target < 0 || target >= n)
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " out of range [0," + std::to_string(n) + ")");
  const double* s = scores.values().data();
  const double loss = logsumexp(s, n) - s[target];
  auto* sn = scores.node();
  return make_op({}, {loss}, {scores}, [sn, target, n](TensorNode& self) {
    if (!sn->needs_grad) return;
    double* ds = sn->ensure_grad().data();
    std::vector<double> p(n);
    softmax_row(sn->values.data(), p.data(), n);
    const double g = self.grad[0];
    for (int j = 0; j < n; ++j) ds[j] += g * (p[j] - (j == target ? 1.0 : 0.0));
  });
}

Tensor ce_mean(const Tensor& scores, const std::vector<int>& targets) {
  if (scores.rank() != 2)
    throw ShapeError("ce_mean: expected rank-2 scores, got " + shape_str(scores.shape()));
  const int rows = scores.shape()[0];
  const int n = scores.shape()[1];
  if (static_cast<int>(targets.size()) != rows)
    throw ShapeError("ce_mean: got " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  double acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0 || t >= n)
      throw IndexError("ce_mean: target " + std::to_string(t) + " at row " +
                       std::to_string(r) + " out of range [0," + std::to_string(n) + ")");
    const double* row = scores.values().data() + static_cast<std::size_t>(r) * n;
    acc += logsumexp(row, n) - row[t];
  }
  auto* sn = scores.node();
  std::vector<int> tcopy = targets;
  return make_op({}, {acc / rows}, {scores},
                 [sn, tcopy = std::move(tcopy), rows, n](TensorNode& self) {
                   if (!sn->needs_grad) return;
                   double* ds = sn->ensure_grad().data();
                   const double g = self.grad[0] / rows;
                   std::vector<double> p(n);
                   for (int r = 0; r < rows; ++r) {
                     const double* row = sn->values.data() + static_cast<std::size_t>(r) * n;
                     softmax_row(row, p.data(), n);
                     double* d = ds + static_cast<std::size_t>(r) * n;
                     for (int j = 0; j < n; ++j)
                       d[j] += g * (p[j] - (j == tcopy[r] ? 1.0 : 0.0));
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->needs_grad) {
      double* da = an->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
    }
    if (bn->needs_grad) {
      double* db = bn->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->needs_grad) {
      double* da = an->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
    }
    if (bn->needs_grad) {
      double* db = bn->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    if (an->needs_grad) {
      double* da = an->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        da[i] += self.grad[i] * bn->values[i];
    }
    if (bn->needs_grad) {
      double* db = bn->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        db[i] += self.grad[i] * an->values[i];
    }
  });
}

Tensor addn(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("addn: empty operand list");
  for (const Tensor& x : xs) check_same_shape("addn", xs[0], x);
  std::vector<double> out = xs[0].values();
  for (std::size_t k = 1; k < xs.size(); ++k)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xs[k].values()[i];
  std::vector<TensorNode*> raw;
  raw.reserve(xs.size());
  for (const Tensor& x : xs) raw.push_back(x.node());
  return make_op(xs[0].shape(), std::move(out), xs,
                 [raw = std::move(raw)](TensorNode& self) {
                   for (TensorNode* p : raw) {
                     if (!p->needs_grad) continue;
                     double* d = p->ensure_grad().data();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
                   }
                 });
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + c;
  auto* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  auto* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, c](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * c;
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2 || s.rank() != 1 || x.shape()[0] != s.shape()[0])
    throw ShapeError("scale_rows: shapes disagree: x=" + shape_str(x.shape()) +
                     " s=" + shape_str(s.shape()));
  const int m = x.shape()[0];
  const int n = x.shape()[1];
  std::vector<double> out(x.values().size());
  for (int i = 0; i < m; ++i) {
    const double sv = s.values()[i];
    const double* xr = x.values().data() + static_cast<std::size_t>(i) * n;
    double* o = out.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) o[j] = xr[j] * sv;
  }
  auto* xn = x.node();
  auto* sn = s.node();
  return make_op(x.shape(), std::move(out), {x, s}, [xn, sn, m, n](TensorNode& self) {
    for (int i = 0; i < m; ++i) {
      const double* g = self.grad.data() + static_cast<std::size_t>(i) * n;
      if (xn->needs_grad) {
        double* dx = xn->ensure_grad().data() + static_cast<std::size_t>(i) * n;
        const double sv = sn->values[i];
        for (int j = 0; j < n; ++j) dx[j] += g[j] * sv;
      }
      if (sn->needs_grad) {
        const double* xr = xn->values.data() + static_cast<std::size_t>(i) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g[j] * xr[j];
        sn->ensure_grad()[i] += acc;
      }
    }
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1)
    throw ShapeError("scale_by: scale must be a scalar, got " + shape_str(s.shape()));
  const double sv = s.values()[0];
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * sv;
  auto* xn = x.node();
  auto* sn = s.node();
  return make_op(x.shape(), std::move(out), {x, s}, [xn, sn, sv](TensorNode& self) {
    if (xn->needs_grad) {
      double* dx = xn->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * sv;
    }
    if (sn->needs_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * xn->values[i];
      sn->ensure_grad()[0] += acc;
    }
  });
}

Tensor column(const Tensor& x, int j) {
  if (x.rank() != 2)
    throw ShapeError("column: expected rank 2, got " + shape_str(x.shape()));
  const int m = x.shape()[0];
  const int n = x.shape()[1];
  if (j < 0 || j >= n)
    throw IndexError("column: index " + std::to_string(j) + " out of range [0," +
                     std::to_string(n) + ")");
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) out[i] = x.values()[static_cast<std::size_t>(i) * n + j];
  auto* xn = x.node();
  return make_op({m}, std::move(out), {x}, [xn, j, m, n](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (int i = 0; i < m; ++i) dx[static_cast<std::size_t>(i) * n + j] += self.grad[i];
  });
}

Tensor element(const Tensor& x, int i) {
  if (x.rank() != 1)
    throw ShapeError("element: expected rank 1, got " + shape_str(x.shape()));
  if (i < 0 || i >= x.shape()[0])
    throw IndexError("element: index " + std::to_string(i) + " out of range [0," +
                     std::to_string(x.shape()[0]) + ")");
  auto* xn = x.node();
  return make_op({}, {x.values()[i]}, {x}, [xn, i](TensorNode& self) {
    if (xn->needs_grad) xn->ensure_grad()[i] += self.grad[0];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  auto* xn = x.node();
  return make_op({}, {acc}, {x}, [xn](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (std::size_t i = 0; i < xn->values.size(); ++i) dx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  auto* xn = x.node();
  return make_op({}, {acc * inv}, {x}, [xn, inv](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < xn->values.size(); ++i) dx[i] += g;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto* xn = x.node();
  return make_op(std::move(shape), x.values(), {x}, [xn](TensorNode& self) {
    if (!xn->needs_grad) return;
    double* dx = xn->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor detach(const Tensor& x) { return Tensor::from(x.shape(), x.values()); }

Tensor straight_through(std::vector<double> hard, const Tensor& soft) {
  if (hard.size() != soft.values().size())
    throw ShapeError("straight_through: hard values size " +
                     std::to_string(hard.size()) + " does not match " +
                     shape_str(soft.shape()));
  auto* sn = soft.node();
  return make_op(soft.shape(), std::move(hard), {soft}, [sn](TensorNode& self) {
    if (!sn->needs_grad) return;
    double* ds = sn->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ds[i] += self.grad[i];
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a defined scalar tensor");
  TensorNode* root = loss.node();
  root->ensure_grad()[0] += 1.0;
  if (!root->needs_grad) return;

  // Iterative post-order DFS; reverse of the collected order is topological.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    // Only leaves retain gradients across calls; intermediates are consumed
    // by the pass so that repeated backward() stays additive on the leaves.
    if (!n->requires_grad) n->grad.clear();
  }
}

Tensor sample_gumbel(RngState& rng, Shape shape) {
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : out) v = rng.gumbel();
  return Tensor::from(std::move(shape), std::move(out));
}

int argmax(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("argmax: empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace copnet
