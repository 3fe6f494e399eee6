#include "copnet/model.hpp"

#include <cmath>

#include "copnet/common.hpp"

namespace copnet {

namespace {

void check_positive(int v, const char* name) {
  if (v < 1) throw ConfigError(std::string(name) + " must be at least 1, got " +
                               std::to_string(v));
}

Tensor init_weight(RngState& rng, int d_in, int d_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  std::vector<double> w(static_cast<std::size_t>(d_in) * d_out);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
  return Tensor::param({d_in, d_out}, std::move(w));
}

Tensor init_bias(int d) {
  return Tensor::param({d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
}

Expert init_expert(RngState& rng, int d_in, int hidden, int d_out) {
  Expert e;
  e.w1 = init_weight(rng, d_in, hidden);
  e.b1 = init_bias(hidden);
  e.w2 = init_weight(rng, hidden, d_out);
  e.b2 = init_bias(d_out);
  return e;
}

MoePool init_pool(RngState& rng, int n, int d_in, int hidden, int d_out) {
  MoePool pool;
  pool.d_in = d_in;
  pool.hidden = hidden;
  pool.d_out = d_out;
  pool.experts.reserve(n);
  for (int i = 0; i < n; ++i) pool.experts.push_back(init_expert(rng, d_in, hidden, d_out));
  pool.gate.w = init_weight(rng, d_in, n);
  pool.gate.b = init_bias(n);
  return pool;
}

void append_expert_params(std::vector<NamedParam>& out, const std::string& prefix,
                          const Expert& e) {
  out.push_back({prefix + "/w1", e.w1});
  out.push_back({prefix + "/b1", e.b1});
  out.push_back({prefix + "/w2", e.w2});
  out.push_back({prefix + "/b2", e.b2});
}

void append_pool_params(std::vector<NamedParam>& out, const std::string& prefix,
                        const MoePool& pool) {
  for (int i = 0; i < pool.size(); ++i)
    append_expert_params(out, prefix + "/e" + std::to_string(i), pool.experts[i]);
  out.push_back({prefix + "/gate/w", pool.gate.w});
  out.push_back({prefix + "/gate/b", pool.gate.b});
}

}  // namespace

void CopConfig::validate() const {
  check_positive(d_q, "d_q");
  check_positive(d_v, "d_v");
  check_positive(d_i, "d_i");
  check_positive(vocab, "vocab");
  check_positive(n1, "n1");
  check_positive(n2, "n2");
  check_positive(h1, "h1");
  check_positive(h2, "h2");
  check_positive(ref_h1, "ref_h1");
  check_positive(ref_h2, "ref_h2");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (k_select < 1 || k_select > std::min(n1, n2))
    throw ConfigError("k_select=" + std::to_string(k_select) +
                      " out of range [1," + std::to_string(std::min(n1, n2)) + "]");
  const BudgetReport b1 = budget_check(d_q, ref_h1, d_i, {{n1 + 1, d_q, h1, d_i}});
  if (!b1.pass)
    throw ConfigError("interpreting stage exceeds the parameter budget: " +
                      std::to_string(b1.total_params) + " > " +
                      std::to_string(b1.reference_params));
  const BudgetReport b2 = budget_check(d_i, ref_h2, vocab, {{n2 + 1, d_i, h2, vocab}});
  if (!b2.pass)
    throw ConfigError("answering stage exceeds the parameter budget: " +
                      std::to_string(b2.total_params) + " > " +
                      std::to_string(b2.reference_params));
}

std::vector<NamedParam> CopModel::parameters() const {
  std::vector<NamedParam> out;
  append_pool_params(out, "cop1", cop1);
  append_expert_params(out, "w1_m", w1_m);
  append_pool_params(out, "cop2", cop2);
  append_expert_params(out, "w2_m", w2_m);
  out.push_back({"fuse/q", fuse_q});
  out.push_back({"fuse/v/w", fuse_v});
  out.push_back({"fuse/v/b", fuse_v_bias});
  if (w1_x) append_expert_params(out, "w1_x", *w1_x);
  return out;
}

std::vector<NamedParam> MonolithModel::parameters() const {
  std::vector<NamedParam> out;
  append_expert_params(out, "w1", w1);
  append_expert_params(out, "w2", w2);
  out.push_back({"fuse/q", fuse_q});
  out.push_back({"fuse/v/w", fuse_v});
  out.push_back({"fuse/v/b", fuse_v_bias});
  return out;
}

GateSelector default_selector(const CopConfig& cfg) {
  const double tau = cfg.temperature;
  const int k = cfg.k_select;
  return [tau, k](int, const MoePool&, const Tensor& logits, RngState* rng,
                  RoutingMode mode) {
    if (k == 1) return select_one_hot(logits, rng, tau, mode);
    return select_k_hot(logits, k, rng, tau, mode);
  };
}

GateSelector random_selector() {
  return [](int, const MoePool& pool, const Tensor& logits, RngState* rng,
            RoutingMode) {
    if (rng == nullptr)
      throw ContractError("random_selector: an rng is required");
    const int rows = logits.rank() == 2 ? logits.shape()[0] : 1;
    return select_random(pool.size(), rows, *rng);
  };
}

CopModel init_cop_model(const CopConfig& cfg, std::uint64_t seed,
                        bool with_broken_interpreter) {
  cfg.validate();
  RngState rng = RngState(seed).split("init");
  CopModel m;
  m.cfg = cfg;
  m.cop1 = init_pool(rng, cfg.n1, cfg.d_q, cfg.h1, cfg.d_i);
  m.w1_m = init_expert(rng, cfg.d_q, cfg.h1, cfg.d_i);
  m.cop2 = init_pool(rng, cfg.n2, cfg.d_i, cfg.h2, cfg.vocab);
  m.w2_m = init_expert(rng, cfg.d_i, cfg.h2, cfg.vocab);
  m.fuse_q = init_weight(rng, cfg.d_i, cfg.d_i);
  m.fuse_v = init_weight(rng, cfg.d_v, cfg.d_i);
  m.fuse_v_bias = init_bias(cfg.d_i);
  if (with_broken_interpreter) m.w1_x = init_expert(rng, cfg.d_q, cfg.h1, cfg.d_i);
  return m;
}

MonolithModel init_monolith_model(const CopConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngState rng = RngState(seed).split("init");
  MonolithModel m;
  m.cfg = cfg;
  m.w1 = init_expert(rng, cfg.d_q, cfg.ref_h1, cfg.d_i);
  m.w2 = init_expert(rng, cfg.d_i, cfg.ref_h2, cfg.vocab);
  m.fuse_q = init_weight(rng, cfg.d_i, cfg.d_i);
  m.fuse_v = init_weight(rng, cfg.d_v, cfg.d_i);
  m.fuse_v_bias = init_bias(cfg.d_i);
  return m;
}

Tensor fuse_project(const Tensor& fuse_q, const Tensor& fuse_v,
                    const Tensor& fuse_v_bias, const Tensor& interp_q,
                    const Tensor& v) {
  return mul(matmul(interp_q, fuse_q), affine(v, fuse_v, fuse_v_bias));
}

Tensor fusion(const CopModel& m, const Tensor& interp_q, const Tensor& v) {
  return fuse_project(m.fuse_q, m.fuse_v, m.fuse_v_bias, interp_q, v);
}

InterpretResult interpret(const CopModel& m, const Tensor& q, const Tensor& v,
                          RngState* rng, RoutingMode mode) {
  return interpret(m, q, v, rng, mode, default_selector(m.cfg));
}

InterpretResult interpret(const CopModel& m, const Tensor& q, const Tensor& v,
                          RngState* rng, RoutingMode mode, const GateSelector& selector) {
  InterpretResult r;
  r.sel1 = selector(0, m.cop1, gate_logits(m.cop1, q), rng, mode);
  r.i_mul = fusion(m, moe_forward(m.cop1, q, r.sel1), v);
  r.i_q = m.w1_m.forward(q);
  return r;
}

AnswerResult answer_logits(const CopModel& m, const Tensor& i_mul, const Tensor& i_q,
                           RngState* rng, RoutingMode mode) {
  return answer_logits(m, i_mul, i_q, rng, mode, default_selector(m.cfg));
}

AnswerResult answer_logits(const CopModel& m, const Tensor& i_mul, const Tensor& i_q,
                           RngState* rng, RoutingMode mode, const GateSelector& selector) {
  AnswerResult r;
  const Tensor i_mul_branch = m.cfg.stop_gradient_branches ? detach(i_mul) : i_mul;
  const Tensor i_q_branch = m.cfg.stop_gradient_branches ? detach(i_q) : i_q;
  r.sel2_mul = selector(1, m.cop2, gate_logits(m.cop2, i_mul), rng, mode);
  r.z11 = moe_forward(m.cop2, i_mul, r.sel2_mul);
  r.z10 = m.w2_m.forward(i_mul_branch);
  r.sel2_q = selector(2, m.cop2, gate_logits(m.cop2, i_q_branch), rng, mode);
  r.z01 = moe_forward(m.cop2, i_q_branch, r.sel2_q);
  r.z00 = m.w2_m.forward(i_q_branch);
  return r;
}

ForwardTrace cop_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                         RngState* rng, RoutingMode mode) {
  return cop_forward(m, q, v, rng, mode, default_selector(m.cfg));
}

ForwardTrace cop_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                         RngState* rng, RoutingMode mode, const GateSelector& selector) {
  ForwardTrace t;
  InterpretResult ir = interpret(m, q, v, rng, mode, selector);
  t.i_mul = ir.i_mul;
  t.i_q = ir.i_q;
  t.sel1 = ir.sel1;
  AnswerResult ar = answer_logits(m, t.i_mul, t.i_q, rng, mode, selector);
  t.z11 = ar.z11;
  t.z10 = ar.z10;
  t.z01 = ar.z01;
  t.z00 = ar.z00;
  t.sel2_mul = ar.sel2_mul;
  t.sel2_q = ar.sel2_q;
  return t;
}

ForwardTrace broken_causal_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                                   RngState* rng, RoutingMode mode) {
  return broken_causal_forward(m, q, v, rng, mode, default_selector(m.cfg));
}

ForwardTrace broken_causal_forward(const CopModel& m, const Tensor& q, const Tensor& v,
                                   RngState* rng, RoutingMode mode,
                                   const GateSelector& selector) {
  if (!m.w1_x)
    throw ContractError(
        "broken_causal_forward: model lacks the extra monolithic interpreter");
  ForwardTrace t;
  InterpretResult ir = interpret(m, q, v, rng, mode, selector);
  t.i_mul = ir.i_mul;
  t.i_q = ir.i_q;
  t.sel1 = ir.sel1;

  t.sel2_mul = selector(1, m.cop2, gate_logits(m.cop2, t.i_mul), rng, mode);
  t.z11 = moe_forward(m.cop2, t.i_mul, t.sel2_mul);
  const Tensor i_mul_branch = m.cfg.stop_gradient_branches ? detach(t.i_mul) : t.i_mul;
  t.z10 = m.w2_m.forward(i_mul_branch);

  // The causal break: the "unimodal" answering path sees a fused multimodal
  // interpretation instead of i_q.
  Tensor i_x = fuse_project(m.fuse_q, m.fuse_v, m.fuse_v_bias, m.w1_x->forward(q), v);
  if (m.cfg.stop_gradient_branches) i_x = detach(i_x);
  t.sel2_q = selector(2, m.cop2, gate_logits(m.cop2, i_x), rng, mode);
  t.z01 = moe_forward(m.cop2, i_x, t.sel2_q);

  const Tensor i_q_branch = m.cfg.stop_gradient_branches ? detach(t.i_q) : t.i_q;
  t.z00 = m.w2_m.forward(i_q_branch);
  return t;
}

Tensor finalize(const Tensor& z11, const Tensor& z10, const Tensor& z01,
                const Tensor& z00) {
  return sub(log_sigmoid(addn({z11, z10, z01, z00})),
             log_sigmoid(addn({z10, z01, z00})));
}

Tensor finalize(const ForwardTrace& trace) {
  return finalize(trace.z11, trace.z10, trace.z01, trace.z00);
}

LossParts cop_loss(const ForwardTrace& trace, int target) {
  LossParts p;
  p.l_total = cross_entropy(
      log_sigmoid(addn({trace.z11, trace.z10, trace.z01, trace.z00})), target);
  p.l_m = cross_entropy(log_sigmoid(trace.z10), target);
  p.l_u = add(cross_entropy(log_sigmoid(trace.z01), target),
              cross_entropy(log_sigmoid(trace.z00), target));
  p.total = add(add(p.l_total, p.l_m), p.l_u);
  return p;
}

LossParts cop_loss_batch(const ForwardTrace& trace, const std::vector<int>& targets) {
  LossParts p;
  p.l_total = ce_mean(
      log_sigmoid(addn({trace.z11, trace.z10, trace.z01, trace.z00})), targets);
  p.l_m = ce_mean(log_sigmoid(trace.z10), targets);
  p.l_u = add(ce_mean(log_sigmoid(trace.z01), targets),
              ce_mean(log_sigmoid(trace.z00), targets));
  p.total = add(add(p.l_total, p.l_m), p.l_u);
  return p;
}

int predict(const Tensor& z_final) {
  if (z_final.rank() != 1 || z_final.shape()[0] < 1)
    throw ShapeError("predict: expected a non-empty rank-1 tensor, got " +
                     shape_str(z_final.shape()));
  return argmax(z_final.values());
}

std::vector<int> predict_rows(const Tensor& z_final) {
  if (z_final.rank() != 2)
    throw ShapeError("predict_rows: expected rank 2, got " + shape_str(z_final.shape()));
  const int rows = z_final.shape()[0];
  const int n = z_final.shape()[1];
  std::vector<int> out(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = z_final.values().data() + static_cast<std::size_t>(r) * n;
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    out[r] = best;
  }
  return out;
}

Tensor cfvqa_finalize(const Tensor& z_k, const Tensor& z_q, const CfvqaParams& params) {
  return sub(log_sigmoid(add(z_k, z_q)), log_sigmoid(add_scalar(z_q, params.c)));
}

Tensor cfvqa_loss(const Tensor& z_k, const Tensor& z_q, int target) {
  return add(cross_entropy(log_sigmoid(add(z_k, z_q)), target),
             cross_entropy(log_sigmoid(z_q), target));
}

Tensor monolithic_forward(const MonolithModel& m, const Tensor& q, const Tensor& v) {
  return m.w2.forward(
      fuse_project(m.fuse_q, m.fuse_v, m.fuse_v_bias, m.w1.forward(q), v));
}

}  // namespace copnet
