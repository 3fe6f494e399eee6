#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "copnet/rng.hpp"
#include "copnet/tensor.hpp"

namespace copnet {

// How gate selections are produced.
//   kTrain:     hard one-hot sampled via Gumbel-max; gradients flow through
//               the softened softmax((logits+noise)/tau) (straight-through).
//   kInference: deterministic argmax of the logits, no noise, no rng.
//   kSoftRelax: the softened weights themselves as forward values; the smooth
//               surrogate whose gradient the straight-through estimator
//               reproduces (used by gradient checks).
enum class RoutingMode { kTrain, kInference, kSoftRelax };

// Two-layer perceptron d_in -> hidden -> d_out with relu in between. Every
// expert in a pool and every monolithic network shares this architecture.
struct Expert {
  Tensor w1, b1, w2, b2;

  Tensor forward(const Tensor& x) const {
    return affine(relu(affine(x, w1, b1)), w2, b2);
  }
};

struct GateNetwork {
  Tensor w, b;  // [d_in,N], [N]
};

struct MoePool {
  int d_in = 0;
  int hidden = 0;
  int d_out = 0;
  std::vector<Expert> experts;
  GateNetwork gate;

  int size() const { return static_cast<int>(experts.size()); }
};

// Result of gating one input (or a batch of inputs, one selection per row).
// `weights` is [N] or [B,N] and stays connected to the gradient graph in
// training mode; `chosen` holds k selected expert indices per row, ascending.
struct GateSelection {
  Tensor weights;
  std::vector<int> chosen;
  int k = 1;
  RoutingMode mode = RoutingMode::kInference;

  int rows() const { return static_cast<int>(chosen.size()) / k; }
  const int* chosen_row(int r) const { return chosen.data() + static_cast<std::size_t>(r) * k; }
  // Index of the largest-weight expert in a row.
  int top_expert(int r) const;
};

// Affine gate output G(x); differentiable.
Tensor gate_logits(const MoePool& pool, const Tensor& x);

// Hard 1-hot selection. Training adds Gumbel noise and substitutes the
// softened softmax gradient; inference is the noise-free argmax (rng unused,
// may be null). Ties break to the lowest index.
GateSelection select_one_hot(const Tensor& logits, RngState* rng,
                             double temperature, RoutingMode mode);

// Top-k selection; weights are the softmax over the selected entries and
// exact zeros elsewhere. k=1 picks the same index as select_one_hot on the
// same draw, with weight exactly 1.0.
GateSelection select_k_hot(const Tensor& logits, int k, RngState* rng,
                           double temperature, RoutingMode mode);

// Uniform-random one-hot selection, ignoring logits (the routing ablation).
GateSelection select_random(int n_experts, int rows, RngState& rng);

// y = sum_n g_n * E_n(x). With an exact one-hot selection the result equals
// the chosen expert's output bit for bit; in inference mode zero-weight
// experts are skipped for rank-1 inputs.
Tensor moe_forward(const MoePool& pool, const Tensor& x, const GateSelection& sel);

// --- parameter budget (experts + monolith vs the reference layer) ----------

// d_in*h + h + h*d_out + d_out.
std::int64_t mlp_param_count(int d_in, int hidden, int d_out);

struct NetGroup {
  int count = 1;  // number of identical networks
  int d_in = 0;
  int hidden = 0;
  int d_out = 0;
};

struct BudgetReport {
  std::int64_t reference_params = 0;
  std::int64_t total_params = 0;
  bool pass = false;
};

// Passes iff the summed parameters of all listed networks do not exceed the
// reference layer's.
BudgetReport budget_check(int ref_d_in, int ref_hidden, int ref_d_out,
                          const std::vector<NetGroup>& nets);

// Largest hidden size such that `count` networks of (d_in -> h' -> d_out)
// stay within the reference layer budget; ConfigError if none fits.
int fit_hidden_to_budget(int ref_d_in, int ref_hidden, int ref_d_out, int count);

}  // namespace copnet
