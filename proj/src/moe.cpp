#include "copnet/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "copnet/common.hpp"

namespace copnet {

namespace {

void check_gate_shape(const Tensor& logits) {
  if (logits.rank() != 1 && logits.rank() != 2)
    throw ShapeError("gate selection: logits must be rank 1 or 2, got " +
                     shape_str(logits.shape()));
}

int gate_rows(const Tensor& logits) { return logits.rank() == 2 ? logits.shape()[0] : 1; }
int gate_width(const Tensor& logits) {
  return logits.rank() == 2 ? logits.shape()[1] : logits.shape()[0];
}

// Top-k indices of one row, ties to the lowest index, returned ascending.
void top_k_row(const double* keys, int n, int k, int* out) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [keys](int a, int b) { return keys[a] > keys[b]; });
  std::sort(idx.begin(), idx.begin() + k);
  std::copy(idx.begin(), idx.begin() + k, out);
}

// softmax over the `chosen` entries of each row (scaled by inv_temp), exact
// zeros elsewhere. Differentiable in x on the selected support.
Tensor masked_softmax(const Tensor& x, const std::vector<int>& chosen, int k,
                      double inv_temp) {
  const int rows = gate_rows(x);
  const int n = gate_width(x);
  std::vector<double> out(x.values().size(), 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + static_cast<std::size_t>(r) * n;
    double* o = out.data() + static_cast<std::size_t>(r) * n;
    const int* idx = chosen.data() + static_cast<std::size_t>(r) * k;
    double mx = xr[idx[0]] * inv_temp;
    for (int j = 1; j < k; ++j) mx = std::max(mx, xr[idx[j]] * inv_temp);
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      o[idx[j]] = std::exp(xr[idx[j]] * inv_temp - mx);
      s += o[idx[j]];
    }
    for (int j = 0; j < k; ++j) o[idx[j]] /= s;
  }
  auto* xn = x.node();
  std::vector<int> chosen_copy = chosen;
  return make_op(x.shape(), std::move(out), {x},
                 [xn, chosen_copy = std::move(chosen_copy), rows, n, k,
                  inv_temp](detail::TensorNode& self) {
                   if (!xn->needs_grad) return;
                   double* dx = xn->ensure_grad().data();
                   for (int r = 0; r < rows; ++r) {
                     const double* w = self.values.data() + static_cast<std::size_t>(r) * n;
                     const double* g = self.grad.data() + static_cast<std::size_t>(r) * n;
                     const int* idx = chosen_copy.data() + static_cast<std::size_t>(r) * k;
                     double dot = 0.0;
                     for (int j = 0; j < k; ++j) dot += g[idx[j]] * w[idx[j]];
                     double* d = dx + static_cast<std::size_t>(r) * n;
                     for (int j = 0; j < k; ++j)
                       d[idx[j]] += inv_temp * w[idx[j]] * (g[idx[j]] - dot);
                   }
                 });
}

std::vector<double> one_hot_rows(const std::vector<int>& chosen, int rows, int n) {
  std::vector<double> hard(static_cast<std::size_t>(rows) * n, 0.0);
  for (int r = 0; r < rows; ++r) hard[static_cast<std::size_t>(r) * n + chosen[r]] = 1.0;
  return hard;
}

}  // namespace

int GateSelection::top_expert(int r) const {
  const int n = weights.rank() == 2 ? weights.shape()[1] : weights.shape()[0];
  const double* w = weights.values().data() + static_cast<std::size_t>(r) * n;
  int best = chosen_row(r)[0];
  for (int j = 1; j < k; ++j)
    if (w[chosen_row(r)[j]] > w[best]) best = chosen_row(r)[j];
  return best;
}

Tensor gate_logits(const MoePool& pool, const Tensor& x) {
  return affine(x, pool.gate.w, pool.gate.b);
}

GateSelection select_one_hot(const Tensor& logits, RngState* rng,
                             double temperature, RoutingMode mode) {
  check_gate_shape(logits);
  if (temperature <= 0.0)
    throw ContractError("select_one_hot: temperature must be positive");
  const int rows = gate_rows(logits);
  const int n = gate_width(logits);

  GateSelection sel;
  sel.k = 1;
  sel.mode = mode;
  sel.chosen.resize(rows);

  if (mode == RoutingMode::kInference) {
    for (int r = 0; r < rows; ++r) {
      const double* row = logits.values().data() + static_cast<std::size_t>(r) * n;
      sel.chosen[r] = static_cast<int>(std::max_element(row, row + n) - row);
    }
    sel.weights = Tensor::from(logits.shape(), one_hot_rows(sel.chosen, rows, n));
    return sel;
  }

  if (rng == nullptr)
    throw ContractError("select_one_hot: training selection requires an rng");
  Tensor noise = sample_gumbel(*rng, logits.shape());
  Tensor keyed = add(logits, noise);
  for (int r = 0; r < rows; ++r) {
    const double* row = keyed.values().data() + static_cast<std::size_t>(r) * n;
    sel.chosen[r] = static_cast<int>(std::max_element(row, row + n) - row);
  }
  Tensor soft = softmax(mul_scalar(keyed, 1.0 / temperature));
  if (mode == RoutingMode::kSoftRelax) {
    sel.weights = soft;
  } else {
    sel.weights = straight_through(one_hot_rows(sel.chosen, rows, n), soft);
  }
  return sel;
}

GateSelection select_k_hot(const Tensor& logits, int k, RngState* rng,
                           double temperature, RoutingMode mode) {
  check_gate_shape(logits);
  if (temperature <= 0.0)
    throw ContractError("select_k_hot: temperature must be positive");
  const int rows = gate_rows(logits);
  const int n = gate_width(logits);
  if (k < 1 || k > n)
    throw ContractError("select_k_hot: k=" + std::to_string(k) +
                        " out of range [1," + std::to_string(n) + "]");

  GateSelection sel;
  sel.k = k;
  sel.mode = mode;
  sel.chosen.resize(static_cast<std::size_t>(rows) * k);

  const bool training = mode != RoutingMode::kInference;
  Tensor keys = logits;
  if (training) {
    if (rng == nullptr)
      throw ContractError("select_k_hot: training selection requires an rng");
    keys = add(logits, sample_gumbel(*rng, logits.shape()));
  }
  for (int r = 0; r < rows; ++r)
    top_k_row(keys.values().data() + static_cast<std::size_t>(r) * n, n, k,
              sel.chosen.data() + static_cast<std::size_t>(r) * k);

  // Noise decides membership; the weights renormalize the plain logits over
  // the selected support (temperature applies in training only).
  sel.weights = masked_softmax(logits, sel.chosen, k,
                               training ? 1.0 / temperature : 1.0);
  return sel;
}

GateSelection select_random(int n_experts, int rows, RngState& rng) {
  if (n_experts < 1) throw ContractError("select_random: empty pool");
  GateSelection sel;
  sel.k = 1;
  sel.mode = RoutingMode::kInference;
  sel.chosen.resize(rows);
  for (int r = 0; r < rows; ++r)
    sel.chosen[r] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_experts)));
  Shape shape = rows == 1 ? Shape{n_experts} : Shape{rows, n_experts};
  sel.weights = Tensor::from(std::move(shape), one_hot_rows(sel.chosen, rows, n_experts));
  return sel;
}

Tensor moe_forward(const MoePool& pool, const Tensor& x, const GateSelection& sel) {
  const int n = pool.size();
  if (gate_width(sel.weights) != n)
    throw ShapeError("moe_forward: selection width " +
                     std::to_string(gate_width(sel.weights)) + " does not match pool size " +
                     std::to_string(n));
  if (x.rank() == 1) {
    if (sel.weights.rank() != 1)
      throw ShapeError("moe_forward: rank-1 input needs a rank-1 selection");
    if (sel.mode == RoutingMode::kInference) {
      // Zero-weight experts contribute exact zeros; skip them.
      std::vector<Tensor> terms;
      for (int j = 0; j < sel.k; ++j) {
        const int e = sel.chosen_row(0)[j];
        terms.push_back(scale_by(pool.experts[e].forward(x), element(sel.weights, e)));
      }
      return addn(terms);
    }
    std::vector<Tensor> terms;
    terms.reserve(n);
    for (int e = 0; e < n; ++e)
      terms.push_back(scale_by(pool.experts[e].forward(x), element(sel.weights, e)));
    return addn(terms);
  }
  if (x.rank() != 2 || sel.weights.rank() != 2 || sel.weights.shape()[0] != x.shape()[0])
    throw ShapeError("moe_forward: input " + shape_str(x.shape()) +
                     " incompatible with selection " + shape_str(sel.weights.shape()));
  std::vector<Tensor> terms;
  terms.reserve(n);
  for (int e = 0; e < n; ++e)
    terms.push_back(scale_rows(pool.experts[e].forward(x), column(sel.weights, e)));
  return addn(terms);
}

std::int64_t mlp_param_count(int d_in, int hidden, int d_out) {
  return static_cast<std::int64_t>(d_in) * hidden + hidden +
         static_cast<std::int64_t>(hidden) * d_out + d_out;
}

BudgetReport budget_check(int ref_d_in, int ref_hidden, int ref_d_out,
                          const std::vector<NetGroup>& nets) {
  if (ref_d_in <= 0 || ref_hidden <= 0 || ref_d_out <= 0)
    throw ContractError("budget_check: reference dimensions must be positive");
  BudgetReport report;
  report.reference_params = mlp_param_count(ref_d_in, ref_hidden, ref_d_out);
  for (const NetGroup& g : nets) {
    if (g.count < 0 || g.d_in <= 0 || g.hidden <= 0 || g.d_out <= 0)
      throw ContractError("budget_check: network dimensions must be positive");
    report.total_params += g.count * mlp_param_count(g.d_in, g.hidden, g.d_out);
  }
  report.pass = report.total_params <= report.reference_params;
  return report;
}

int fit_hidden_to_budget(int ref_d_in, int ref_hidden, int ref_d_out, int count) {
  const std::int64_t budget = mlp_param_count(ref_d_in, ref_hidden, ref_d_out);
  const std::int64_t per_h = ref_d_in + 1 + ref_d_out;  // params per hidden unit
  const std::int64_t h = (budget - static_cast<std::int64_t>(count) * ref_d_out) /
                         (static_cast<std::int64_t>(count) * per_h);
  if (h < 1)
    throw ConfigError("no hidden size fits " + std::to_string(count) +
                      " networks into the (" + std::to_string(ref_d_in) + "," +
                      std::to_string(ref_hidden) + "," + std::to_string(ref_d_out) +
                      ") reference budget");
  return static_cast<int>(h);
}

}  // namespace copnet
