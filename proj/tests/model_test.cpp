#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "copnet/common.hpp"
#include "copnet/gradcheck.hpp"
#include "copnet/model.hpp"
#include "copnet/rng.hpp"

using namespace copnet;

namespace {

CopConfig tiny_config() {
  CopConfig cfg;
  cfg.d_q = 4;
  cfg.d_v = 4;
  cfg.d_i = 6;
  cfg.vocab = 5;
  cfg.n1 = 2;
  cfg.n2 = 2;
  cfg.h1 = 3;
  cfg.h2 = 3;
  cfg.ref_h1 = 11;
  cfg.ref_h2 = 10;
  return cfg;
}

Tensor random_vec(RngState& rng, int n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return Tensor::from({n}, std::move(v));
}

}  // namespace

TEST_CASE("config validation and the stage budgets") {
  CopConfig def;
  CHECK_NOTHROW(def.validate());
  CHECK_NOTHROW(tiny_config().validate());

  CopConfig bad = tiny_config();
  bad.h1 = 50;
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("interpreting stage") != std::string::npos);
  }

  CopConfig bad2 = tiny_config();
  bad2.h2 = 50;
  try {
    bad2.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("answering stage") != std::string::npos);
  }

  CopConfig badk = tiny_config();
  badk.k_select = 3;
  CHECK_THROWS_AS(badk.validate(), ConfigError);
}

TEST_CASE("initialization: zero biases, bounded weights, seed determinism") {
  CopModel a = init_cop_model(tiny_config(), 42);
  CopModel b = init_cop_model(tiny_config(), 42);
  CopModel c = init_cop_model(tiny_config(), 43);

  bool any_diff = false;
  auto pa = a.parameters();
  auto pb = b.parameters();
  auto pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor.values() == pb[i].tensor.values());
    if (pa[i].tensor.values() != pc[i].tensor.values()) any_diff = true;

    const auto& shape = pa[i].tensor.shape();
    if (shape.size() == 1) {
      for (double v : pa[i].tensor.values()) CHECK(v == 0.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (double v : pa[i].tensor.values()) CHECK(std::fabs(v) <= bound);
    }
  }
  CHECK(any_diff);
}

TEST_CASE("fusion: identity, annihilation and hand arithmetic") {
  CopModel m = init_cop_model(tiny_config(), 1);
  const int d_i = m.cfg.d_i;

  // v-projection all ones leaves the projected question untouched.
  m.fuse_v = Tensor::zeros({m.cfg.d_v, d_i});
  m.fuse_v_bias = Tensor::full({d_i}, 1.0);
  RngState rng(2);
  Tensor interp = random_vec(rng, d_i);
  Tensor v = random_vec(rng, m.cfg.d_v);
  CHECK(fusion(m, interp, v).values() == matmul(interp, m.fuse_q).values());

  // v-projection all zeros annihilates the output.
  m.fuse_v_bias = Tensor::zeros({d_i});
  for (double x : fusion(m, interp, v).values()) CHECK(x == 0.0);

  // 2-dimensional hand case: interp projected to [1,2], v projected to [3,4].
  CopConfig small = tiny_config();
  small.d_i = 2;
  small.d_v = 2;
  small.ref_h1 = 12;
  small.ref_h2 = 14;
  CopModel hm = init_cop_model(small, 1);
  hm.fuse_q = Tensor::from({2, 2}, {1, 0, 0, 1});
  hm.fuse_v = Tensor::zeros({2, 2});
  hm.fuse_v_bias = Tensor::from({2}, {3, 4});
  const std::vector<double> expected{3, 8};
  CHECK(fusion(hm, Tensor::from({2}, {1, 2}), Tensor::from({2}, {0, 0})).values() ==
        expected);
}

TEST_CASE("interpret: i_q ignores v; single-expert pool reduces exactly") {
  CopModel m = init_cop_model(tiny_config(), 7);
  RngState rng(3);
  Tensor q = random_vec(rng, m.cfg.d_q);
  Tensor v1 = random_vec(rng, m.cfg.d_v);
  Tensor v2 = random_vec(rng, m.cfg.d_v);

  InterpretResult r1 = interpret(m, q, v1, nullptr, RoutingMode::kInference);
  InterpretResult r2 = interpret(m, q, v2, nullptr, RoutingMode::kInference);
  CHECK(r1.i_q.values() == r2.i_q.values());

  CopConfig single = tiny_config();
  single.n1 = 1;
  single.n2 = 1;
  CopModel sm = init_cop_model(single, 7);
  InterpretResult sr = interpret(sm, q, v1, nullptr, RoutingMode::kInference);
  // With the v-projection forced to ones, i_mul is the projected expert output.
  sm.fuse_v = Tensor::zeros({sm.cfg.d_v, sm.cfg.d_i});
  sm.fuse_v_bias = Tensor::full({sm.cfg.d_i}, 1.0);
  InterpretResult sr2 = interpret(sm, q, v1, nullptr, RoutingMode::kInference);
  CHECK(sr2.i_mul.values() ==
        matmul(sm.cop1.experts[0].forward(q), sm.fuse_q).values());
  CHECK(sr.sel1.chosen == std::vector<int>{0});
}

TEST_CASE("answer stage: unimodal branches are v-invariant, multimodal are not") {
  CopModel m = init_cop_model(tiny_config(), 11);
  RngState rng(5);
  Tensor q = random_vec(rng, m.cfg.d_q);
  Tensor v1 = random_vec(rng, m.cfg.d_v);
  Tensor v2 = random_vec(rng, m.cfg.d_v);

  ForwardTrace t1 = cop_forward(m, q, v1, nullptr, RoutingMode::kInference);
  ForwardTrace t2 = cop_forward(m, q, v2, nullptr, RoutingMode::kInference);
  CHECK(t1.z01.values() == t2.z01.values());
  CHECK(t1.z00.values() == t2.z00.values());
  CHECK(t1.z11.values() != t2.z11.values());
  CHECK(t1.z10.values() != t2.z10.values());

  // Same holds in training mode when the noise stream is replayed.
  RngState n1(99), n2(99);
  ForwardTrace tr1 = cop_forward(m, q, v1, &n1, RoutingMode::kTrain);
  ForwardTrace tr2 = cop_forward(m, q, v2, &n2, RoutingMode::kTrain);
  CHECK(tr1.z01.values() == tr2.z01.values());
  CHECK(tr1.z00.values() == tr2.z00.values());
}

TEST_CASE("single answering expert collapses z11 and z01 on equal inputs") {
  CopConfig cfg = tiny_config();
  cfg.n2 = 1;
  CopModel m = init_cop_model(cfg, 13);
  RngState rng(6);
  Tensor i = random_vec(rng, cfg.d_i);
  AnswerResult a = answer_logits(m, i, i, nullptr, RoutingMode::kInference);
  CHECK(a.z11.values() == a.z01.values());
  CHECK(a.z10.values() == a.z00.values());
}

TEST_CASE("finalize: fixtures, sign law and monotonicity in z11") {
  Tensor zero = Tensor::zeros({5});
  for (double v : finalize(zero, zero, zero, zero).values()) CHECK(v == 0.0);

  Tensor z11 = Tensor::from({2}, {2, 0});
  Tensor rest = Tensor::zeros({2});
  const auto out = finalize(z11, rest, rest, rest).values();
  const double expect0 = -std::log1p(std::exp(-2.0)) + std::log(2.0);
  CHECK(out[0] == doctest::Approx(expect0).epsilon(1e-12));
  CHECK(out[0] == doctest::Approx(0.56622).epsilon(1e-4));
  CHECK(out[1] == 0.0);

  RngState rng(14);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor a = random_vec(rng, 4, 3.0);
    Tensor b = random_vec(rng, 4, 3.0);
    Tensor c = random_vec(rng, 4, 3.0);
    Tensor d = random_vec(rng, 4, 3.0);
    const auto z = finalize(a, b, c, d).values();
    for (int i = 0; i < 4; ++i) {
      const double s = a.values()[i];
      if (s > 0.0) CHECK(z[i] > 0.0);
      if (s < 0.0) CHECK(z[i] < 0.0);
      if (s == 0.0) CHECK(z[i] == 0.0);
    }

    std::vector<double> bumped = a.values();
    bumped[1] += 0.5;
    const auto zb = finalize(Tensor::from({4}, bumped), b, c, d).values();
    CHECK(zb[1] > z[1]);
  }
}

TEST_CASE("loss: uniform fixture, exact additivity, descent after one step") {
  ForwardTrace tr;
  tr.z11 = Tensor::zeros({16});
  tr.z10 = Tensor::zeros({16});
  tr.z01 = Tensor::zeros({16});
  tr.z00 = Tensor::zeros({16});
  LossParts p = cop_loss(tr, 3);
  const double ln16 = std::log(16.0);
  CHECK(p.l_total.value() == doctest::Approx(ln16).epsilon(1e-12));
  CHECK(p.l_m.value() == doctest::Approx(ln16).epsilon(1e-12));
  CHECK(p.l_u.value() == doctest::Approx(2 * ln16).epsilon(1e-12));
  CHECK(p.total.value() == doctest::Approx(4 * ln16).epsilon(1e-12));
  CHECK(p.total.value() - ((p.l_total.value() + p.l_m.value()) + p.l_u.value()) == 0.0);

  // One small gradient step on a fixed sample decreases the loss.
  CopModel m = init_cop_model(tiny_config(), 17);
  RngState rng(8);
  Tensor q = random_vec(rng, m.cfg.d_q);
  Tensor v = random_vec(rng, m.cfg.d_v);
  const int target = 2;

  auto loss_value = [&](RoutingMode mode) {
    RngState noise(123);
    ForwardTrace t = cop_forward(m, q, v, &noise, mode);
    return cop_loss(t, target);
  };

  for (auto& np : m.parameters()) np.tensor.zero_grad();
  LossParts before = loss_value(RoutingMode::kTrain);
  backward(before.total);
  for (auto& np : m.parameters()) {
    if (!np.tensor.has_grad()) continue;
    auto& vals = np.tensor.mutable_values();
    const auto& g = np.tensor.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= 0.05 * g[i];
  }
  LossParts after = loss_value(RoutingMode::kTrain);
  CHECK(after.total.value() < before.total.value());
}

TEST_CASE("prediction: argmax with low-index ties, monotone invariance") {
  CHECK(predict(Tensor::from({3}, {0.1, 0.9, 0.3})) == 1);
  CHECK(predict(Tensor::from({4}, {0.5, 0.5, 0.5, 0.5})) == 0);

  RngState rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor z = random_vec(rng, 6, 4.0);
    CHECK(predict(z) == predict(log_sigmoid(z)));
  }
}

TEST_CASE("baseline combination rule") {
  Tensor zk = Tensor::zeros({4});
  Tensor zq = Tensor::zeros({4});
  for (double v : cfvqa_finalize(zk, zq, {0.0}).values()) CHECK(v == 0.0);

  // Saturated question branch: the bias is fully discounted.
  RngState rng(10);
  Tensor zk2 = random_vec(rng, 4, 2.0);
  Tensor zq2 = Tensor::full({4}, 50.0);
  for (double v : cfvqa_finalize(zk2, zq2, {0.0}).values())
    CHECK(std::fabs(v) < 1e-12);

  // c only shifts the subtracted term: the output is strictly decreasing in c.
  Tensor zk3 = random_vec(rng, 4, 1.0);
  Tensor zq3 = random_vec(rng, 4, 1.0);
  const auto low = cfvqa_finalize(zk3, zq3, {0.0}).values();
  const auto high = cfvqa_finalize(zk3, zq3, {1.0}).values();
  for (int i = 0; i < 4; ++i) CHECK(high[i] < low[i]);

  // Companion loss matches its two cross-entropy terms.
  const double l = cfvqa_loss(zk3, zq3, 1).value();
  const double manual = cross_entropy(log_sigmoid(add(zk3, zq3)), 1).value() +
                        cross_entropy(log_sigmoid(zq3), 1).value();
  CHECK(l == doctest::Approx(manual).epsilon(1e-15));
}

TEST_CASE("monolithic baseline is the fused two-network composition") {
  CopConfig cfg = tiny_config();
  MonolithModel mono = init_monolith_model(cfg, 21);
  RngState rng(11);
  Tensor q = random_vec(rng, cfg.d_q);
  Tensor v = random_vec(rng, cfg.d_v);

  const auto direct = mono.w2
      .forward(fuse_project(mono.fuse_q, mono.fuse_v, mono.fuse_v_bias,
                            mono.w1.forward(q), v))
      .values();
  CHECK(monolithic_forward(mono, q, v).values() == direct);

  // Zeroed v-projection: the answer depends on W2(0 .* anything) = W2(0).
  mono.fuse_v = Tensor::zeros({cfg.d_v, cfg.d_i});
  mono.fuse_v_bias = Tensor::zeros({cfg.d_i});
  CHECK(monolithic_forward(mono, q, v).values() ==
        mono.w2.forward(Tensor::zeros({cfg.d_i})).values());

  // The two monolithic nets fill the reference budget exactly.
  BudgetReport b1 = budget_check(cfg.d_q, cfg.ref_h1, cfg.d_i,
                                 {{1, cfg.d_q, cfg.ref_h1, cfg.d_i}});
  CHECK(b1.pass);
  CHECK(b1.total_params == b1.reference_params);
}

TEST_CASE("broken-causal variant: z01 becomes v-sensitive, the rest unchanged") {
  CopModel m = init_cop_model(tiny_config(), 23, /*with_broken_interpreter=*/true);
  // Seed picked so the tiny interpreter is not relu-dead at q.
  RngState rng(16);
  Tensor q = random_vec(rng, m.cfg.d_q);
  Tensor v1 = random_vec(rng, m.cfg.d_v);
  Tensor v2 = random_vec(rng, m.cfg.d_v);

  ForwardTrace b1 = broken_causal_forward(m, q, v1, nullptr, RoutingMode::kInference);
  ForwardTrace b2 = broken_causal_forward(m, q, v2, nullptr, RoutingMode::kInference);
  CHECK(b1.z01.values() != b2.z01.values());
  CHECK(b1.z00.values() == b2.z00.values());

  ForwardTrace std1 = cop_forward(m, q, v1, nullptr, RoutingMode::kInference);
  CHECK(b1.z11.values() == std1.z11.values());
  CHECK(b1.z10.values() == std1.z10.values());
  CHECK(b1.z00.values() == std1.z00.values());

  // v-projection of ones plus w1_x == w1_m collapses the broken path onto
  // cop2 applied to the projected i_q.
  m.w1_x = m.w1_m;
  m.fuse_v = Tensor::zeros({m.cfg.d_v, m.cfg.d_i});
  m.fuse_v_bias = Tensor::full({m.cfg.d_i}, 1.0);
  ForwardTrace b3 = broken_causal_forward(m, q, v1, nullptr, RoutingMode::kInference);
  Tensor proj_iq = matmul(b3.i_q, m.fuse_q);
  GateSelection sel = select_one_hot(gate_logits(m.cop2, proj_iq), nullptr,
                                     m.cfg.temperature, RoutingMode::kInference);
  CHECK(b3.z01.values() == moe_forward(m.cop2, proj_iq, sel).values());

  CopModel plain = init_cop_model(tiny_config(), 23);
  CHECK_THROWS_AS(broken_causal_forward(plain, q, v1, nullptr, RoutingMode::kInference),
                  ContractError);
}

TEST_CASE("full-pipeline gradients match finite differences (frozen noise)") {
  CopModel m = init_cop_model(tiny_config(), 31);
  RngState rng(13);
  Tensor q = random_vec(rng, m.cfg.d_q);
  Tensor v = random_vec(rng, m.cfg.d_v);
  const int target = 2;
  const std::uint64_t noise_seed = 555;

  // The softened-relaxation forward is the smooth surrogate whose gradient
  // the straight-through substitution reports; finite differences are taken
  // against it with the noise draw frozen.
  auto loss_fn = [&]() {
    RngState noise(noise_seed);
    ForwardTrace t = cop_forward(m, q, v, &noise, RoutingMode::kSoftRelax);
    return cop_loss(t, target).total;
  };

  auto params = m.parameters();
  for (auto& np : params) np.tensor.zero_grad();
  backward(loss_fn());

  for (auto& np : params) {
    REQUIRE(np.tensor.has_grad());
    Tensor probe = Tensor::from(np.tensor.shape(), np.tensor.values());
    auto f = [&](const Tensor& cand) {
      const std::vector<double> saved = np.tensor.values();
      np.tensor.mutable_values() = cand.values();
      Tensor loss = loss_fn();
      np.tensor.mutable_values() = saved;
      return loss;
    };
    Tensor fd = finite_diff_check(f, probe, 1e-6);
    INFO("parameter ", np.name);
    CHECK(max_rel_error(np.tensor.grad(), fd.values()) <= 1e-5);
  }
}
