#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "copnet/moe.hpp"
#include "copnet/rng.hpp"
#include "copnet/tensor.hpp"

namespace copnet {

enum class LossKind { kCrossEntropy };

// Dimensions and knobs of the two-stage pathways model. ref_h1/ref_h2 are the
// hidden sizes of the reference layer each stage is budgeted against: the
// experts plus the monolithic network of a stage must not exceed the
// reference layer's parameter count.
struct CopConfig {
  int d_q = 32;
  int d_v = 32;
  int d_i = 64;
  int vocab = 16;
  int n1 = 3;
  int n2 = 3;
  int h1 = 31;
  int h2 = 31;
  int ref_h1 = 128;
  int ref_h2 = 128;
  double temperature = 1.0;
  LossKind loss_kind = LossKind::kCrossEntropy;
  bool stop_gradient_branches = false;
  int k_select = 1;

  // Throws ConfigError on bad dimensions or a violated stage budget.
  void validate() const;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Full two-stage model: interpreting pool (cop1) and answering pool (cop2),
// the monolithic counterparts w1_m/w2_m, and the fusion projections. w1_x is
// the extra interpreter of the broken-causal ablation variant, absent in the
// standard model.
struct CopModel {
  CopConfig cfg;
  MoePool cop1;
  MoePool cop2;
  Expert w1_m;
  Expert w2_m;
  Tensor fuse_q;       // [d_i, d_i]
  Tensor fuse_v;       // [d_v, d_i]
  Tensor fuse_v_bias;  // [d_i]
  std::optional<Expert> w1_x;

  std::vector<NamedParam> parameters() const;
};

// Equal-budget baseline: one interpreting net and one answering net at the
// full reference hidden sizes, same fusion, no gating.
struct MonolithModel {
  CopConfig cfg;  // hidden sizes taken from ref_h1/ref_h2
  Expert w1;
  Expert w2;
  Tensor fuse_q;
  Tensor fuse_v;
  Tensor fuse_v_bias;

  std::vector<NamedParam> parameters() const;
};

// Every intermediate of one forward pass. Tensors are rank 1 for a single
// sample or rank 2 (one row per sample) for a batch.
struct ForwardTrace {
  Tensor i_mul, i_q;
  Tensor z11, z10, z01, z00;
  GateSelection sel1, sel2_mul, sel2_q;
};

struct CfvqaParams {
  double c = 0.0;  // normalization constant of the subtracted branch
};

// Pluggable gate policy; stage is 0 (cop1 on q), 1 (cop2 on i_mul) or
// 2 (cop2 on i_q). The default routes 1-hot (or k-hot when configured); the
// random selector implements the routing ablation.
using GateSelector = std::function<GateSelection(
    int stage, const MoePool& pool, const Tensor& logits, RngState* rng,
    RoutingMode mode)>;

GateSelector default_selector(const CopConfig& cfg);
GateSelector random_selector();

// Deterministic parameter initialization: weights uniform in
// (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero. Validates the config
// (including stage budgets) first.
CopModel init_cop_model(const CopConfig& cfg, std::uint64_t seed,
                        bool with_broken_interpreter = false);
MonolithModel init_monolith_model(const CopConfig& cfg, std::uint64_t seed);

// Elementwise product of the two fusion projections:
// (interp_q * fuse_q) .* (v * fuse_v + bias).
Tensor fuse_project(const Tensor& fuse_q, const Tensor& fuse_v,
                    const Tensor& fuse_v_bias, const Tensor& interp_q,
                    const Tensor& v);
Tensor fusion(const CopModel& m, const Tensor& interp_q, const Tensor& v);

struct InterpretResult {
  Tensor i_mul, i_q;
  GateSelection sel1;
};

// Stage 1: i_mul = Fusion(cop1(q), v), i_q = w1_m(q).
InterpretResult interpret(const CopModel& m, const Tensor& q, const Tensor& v,
                          RngState* rng, RoutingMode mode);
InterpretResult interpret(const CopModel& m, const Tensor& q, const Tensor& v,
                          RngState* rng, RoutingMode mode, const GateSelector& selector);

struct AnswerResult {
  Tensor z11, z10, z01, z00;
  GateSelection sel2_mul, sel2_q;
};

// Stage 2: z11 = cop2(i_mul), z10 = w2_m(i_mul), z01 = cop2(i_q),
// z00 = w2_m(i_q). cop2's gate is evaluated independently on i_mul and i_q.
AnswerResult answer_logits(const CopModel& m, const Tensor& i_mul, const Tensor& i_q,
                           RngState* rng, RoutingMode mode);
AnswerResult answer_logits(const CopModel& m, const Tensor& i_mul, const Tensor& i_q,
                           RngState* rng, RoutingMode mode, const GateSelector& selector);

// Both stages; gate noise is consumed in the order sel1, sel2_mul, sel2_q.
ForwardTrace cop_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                         RngState* rng, RoutingMode mode);
ForwardTrace cop_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                         RngState* rng, RoutingMode mode, const GateSelector& selector);

// Ablation variant: z01 is replaced by cop2(Fusion(w1_x(q), v)); z11, z10 and
// z00 are unchanged. Requires a model built with the broken interpreter.
ForwardTrace broken_causal_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                                   RngState* rng, RoutingMode mode);
ForwardTrace broken_causal_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                                   RngState* rng, RoutingMode mode,
                                   const GateSelector& selector);

// z_final = log_sigmoid(z11+z10+z01+z00) - log_sigmoid(z10+z01+z00).
Tensor finalize(const Tensor& z11, const Tensor& z10, const Tensor& z01,
                const Tensor& z00);
Tensor finalize(const ForwardTrace& trace);

struct LossParts {
  Tensor total;    // l_total + l_m + l_u, exactly
  Tensor l_total;  // CE(log_sigmoid(z11+z10+z01+z00))
  Tensor l_m;      // CE(log_sigmoid(z10))
  Tensor l_u;      // CE(log_sigmoid(z01)) + CE(log_sigmoid(z00))
};

LossParts cop_loss(const ForwardTrace& trace, int target);
LossParts cop_loss_batch(const ForwardTrace& trace, const std::vector<int>& targets);

// argmax of log_sigmoid(z_final), which is the argmax of z_final itself;
// ties resolve to the lowest index.
int predict(const Tensor& z_final);
std::vector<int> predict_rows(const Tensor& z_final);

// Single-mediator baseline combination rule:
// log_sigmoid(z_k + z_q) - log_sigmoid(z_q + c), and its companion loss
// CE(log_sigmoid(z_k+z_q)) + CE(log_sigmoid(z_q)).
Tensor cfvqa_finalize(const Tensor& z_k, const Tensor& z_q, const CfvqaParams& params);
Tensor cfvqa_loss(const Tensor& z_k, const Tensor& z_q, int target);

// w2(Fusion(w1(q), v)): the gating-free equal-budget baseline.
Tensor monolithic_forward(const MonolithModel& m, const Tensor& q, const Tensor& v);

}  // namespace copnet
