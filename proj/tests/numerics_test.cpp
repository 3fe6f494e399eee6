#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "copnet/common.hpp"
#include "copnet/gradcheck.hpp"
#include "copnet/rng.hpp"
#include "copnet/tensor.hpp"

using namespace copnet;

namespace {

Tensor random_tensor(RngState& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar readout with fixed random coefficients so every output coordinate
// affects the loss.
Tensor weighted_readout(const Tensor& y, const std::vector<double>& coeff) {
  return sum(mul(y, Tensor::from(y.shape(), coeff)));
}

std::vector<double> random_coeff(RngState& rng, std::int64_t n) {
  std::vector<double> c(static_cast<std::size_t>(n));
  for (double& x : c) x = -1.0 + 2.0 * rng.uniform();
  return c;
}

}  // namespace

TEST_CASE("matmul identity, zero and hand-computed product") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(eye, a).values() == a.values());

  Tensor zero = Tensor::zeros({2, 2});
  for (double v : matmul(zero, a).values()) CHECK(v == 0.0);

  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  const std::vector<double> expected{19, 22, 43, 50};
  CHECK(matmul(a, b).values() == expected);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
  Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::from({4, 5}, std::vector<double>(20, 1.0));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("affine trivial and hand-computed cases") {
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2}, {1, 2});
  CHECK(affine(Tensor::zeros({2}), w, b).values() == b.values());

  Tensor w0 = Tensor::zeros({2, 2});
  Tensor b0 = Tensor::zeros({2});
  Tensor x = Tensor::from({2}, {3, 4});
  for (double v : affine(x, w0, b0).values()) CHECK(v == 0.0);

  Tensor ones = Tensor::from({2}, {1, 1});
  const std::vector<double> expected{2, 3};
  CHECK(affine(ones, w, b).values() == expected);

  CHECK_THROWS_AS(affine(Tensor::zeros({3}), w, b), ShapeError);
}

TEST_CASE("relu values and flat-region gradient") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  const std::vector<double> expected{0, 0, 2};
  CHECK(relu(x).values() == expected);

  Tensor neg = Tensor::from({4}, {-3, -2, -1, -0.5});
  for (double v : relu(neg).values()) CHECK(v == 0.0);

  Tensor p = Tensor::param({1}, {-5.0});
  backward(sum(relu(p)));
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("softmax symmetry, shift invariance and direct evaluation") {
  Tensor u = Tensor::from({4}, {0.7, 0.7, 0.7, 0.7});
  for (double v : softmax(u).values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  RngState rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {5}, -30.0, 30.0);
    std::vector<double> shifted = x.values();
    const double c = -5.0 + 10.0 * rng.uniform();
    for (double& v : shifted) v += c;
    const auto p = softmax(x).values();
    const auto ps = softmax(Tensor::from({5}, shifted)).values();
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
      CHECK(std::fabs(p[i] - ps[i]) <= 1e-12);
      CHECK(p[i] > 0.0);
      total += p[i];
    }
    CHECK(std::fabs(total - 1.0) <= 1e-12);
  }

  const auto p = softmax(Tensor::from({3}, {10, 0, 0})).values();
  const double denom = std::exp(10.0) + 2.0;
  CHECK(p[0] == doctest::Approx(std::exp(10.0) / denom).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / denom).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.99991).epsilon(1e-4));
}

TEST_CASE("log_sigmoid stable asymptotes") {
  CHECK(log_sigmoid(Tensor::scalar(0.0)).value() ==
        doctest::Approx(-std::log(2.0)).epsilon(1e-15));

  const double lo = log_sigmoid(Tensor::scalar(-1000.0)).value();
  CHECK(std::isfinite(lo));
  CHECK(lo == doctest::Approx(-1000.0).epsilon(1e-12));

  const double hi = log_sigmoid(Tensor::scalar(1000.0)).value();
  CHECK(std::isfinite(hi));
  CHECK(hi <= 0.0);
  CHECK(hi > -1e-300);

  for (double v : {-1e6, 1e6, -123.25, 42.0}) {
    CHECK(std::isfinite(log_sigmoid(Tensor::scalar(v)).value()));
  }
}

TEST_CASE("cross_entropy fixtures") {
  Tensor uniform = Tensor::zeros({16});
  CHECK(cross_entropy(uniform, 3).value() ==
        doctest::Approx(std::log(16.0)).epsilon(1e-15));

  std::vector<double> peaked(16, 0.0);
  peaked[5] = 50.0;
  CHECK(cross_entropy(Tensor::from({16}, peaked), 5).value() ==
        doctest::Approx(0.0).epsilon(1e-15));

  RngState rng(7);
  Tensor x = random_tensor(rng, {8});
  std::vector<double> shifted = x.values();
  for (double& v : shifted) v += 3.25;
  CHECK(cross_entropy(x, 2).value() ==
        doctest::Approx(cross_entropy(Tensor::from({8}, shifted), 2).value())
            .epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(x, 8), IndexError);
  CHECK_THROWS_AS(cross_entropy(x, -1), IndexError);
}

TEST_CASE("backward: product rule, accumulation, scalar contract") {
  Tensor x = Tensor::param({}, {3.0});
  Tensor y = Tensor::param({}, {4.0});
  Tensor loss = mul(x, y);
  backward(loss);
  CHECK(x.grad()[0] == 4.0);
  CHECK(y.grad()[0] == 3.0);

  backward(loss);  // accumulates
  CHECK(x.grad()[0] == 8.0);

  x.zero_grad();
  backward(loss);
  CHECK(x.grad()[0] == 4.0);

  CHECK_THROWS_AS(backward(Tensor::from({2}, {1, 2})), ContractError);
}

TEST_CASE("finite_diff_check on closed forms") {
  auto square = [](const Tensor& t) { return mul(t, t); };
  Tensor g = finite_diff_check(square, Tensor::scalar(3.0), 1e-6);
  CHECK(g.value() == doctest::Approx(6.0).epsilon(1e-8));

  auto constant = [](const Tensor&) { return Tensor::scalar(7.0); };
  for (double v :
       finite_diff_check(constant, Tensor::from({4}, {1, 2, 3, 4}), 1e-6).values())
    CHECK(v == 0.0);

  auto ls_sum = [](const Tensor& t) { return sum(log_sigmoid(t)); };
  for (double v : finite_diff_check(ls_sum, Tensor::zeros({3}), 1e-6).values())
    CHECK(v == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("gradient oracle across every differentiable operation") {
  RngState rng(1234);
  const double tol = 1e-5;
  const double eps = 1e-6;

  auto check_op = [&](const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    Tensor leaf = Tensor::param(x.shape(), x.values());
    backward(f(leaf));
    Tensor fd = finite_diff_check(f, x, eps);
    CHECK(max_rel_error(leaf.grad(), fd.values()) <= tol);
  };

  for (int trial = 0; trial < 5; ++trial) {
    {
      Tensor a = random_tensor(rng, {3, 4});
      Tensor b = random_tensor(rng, {4, 2});
      auto coeff = random_coeff(rng, 6);
      check_op([&](const Tensor& t) { return weighted_readout(matmul(t, b), coeff); }, a);
      check_op([&](const Tensor& t) { return weighted_readout(matmul(a, t), coeff); }, b);
    }
    {
      Tensor x = random_tensor(rng, {2, 3});
      Tensor w = random_tensor(rng, {3, 4});
      Tensor b = random_tensor(rng, {4});
      auto coeff = random_coeff(rng, 8);
      check_op([&](const Tensor& t) { return weighted_readout(affine(t, w, b), coeff); }, x);
      check_op([&](const Tensor& t) { return weighted_readout(affine(x, t, b), coeff); }, w);
      check_op([&](const Tensor& t) { return weighted_readout(affine(x, w, t), coeff); }, b);
    }
    {
      Tensor x = random_tensor(rng, {6});
      auto coeff = random_coeff(rng, 6);
      check_op([&](const Tensor& t) { return weighted_readout(relu(t), coeff); }, x);
      check_op([&](const Tensor& t) { return weighted_readout(log_sigmoid(t), coeff); }, x);
      check_op([&](const Tensor& t) { return weighted_readout(softmax(t), coeff); }, x);
      check_op([&](const Tensor& t) { return cross_entropy(t, 2); }, x);
      check_op([&](const Tensor& t) { return mean(t); }, x);
      check_op([&](const Tensor& t) { return weighted_readout(mul_scalar(t, -1.7), coeff); }, x);
      check_op([&](const Tensor& t) { return weighted_readout(add_scalar(t, 0.9), coeff); }, x);
    }
    {
      Tensor a = random_tensor(rng, {2, 3});
      Tensor b = random_tensor(rng, {2, 3});
      auto coeff = random_coeff(rng, 6);
      check_op([&](const Tensor& t) { return weighted_readout(add(t, b), coeff); }, a);
      check_op([&](const Tensor& t) { return weighted_readout(sub(b, t), coeff); }, a);
      check_op([&](const Tensor& t) { return weighted_readout(mul(t, b), coeff); }, a);
      check_op([&](const Tensor& t) { return weighted_readout(addn({t, b, t}), coeff); }, a);
    }
    {
      Tensor x = random_tensor(rng, {3, 4});
      Tensor s = random_tensor(rng, {3});
      auto coeff = random_coeff(rng, 12);
      const std::vector<double> col_coeff{0.3, -0.7, 1.1};
      check_op([&](const Tensor& t) { return weighted_readout(scale_rows(t, s), coeff); }, x);
      check_op([&](const Tensor& t) { return weighted_readout(scale_rows(x, t), coeff); }, s);
      check_op([&](const Tensor& t) { return weighted_readout(column(t, 1), col_coeff); }, x);
      check_op([&](const Tensor& t) {
        return scale_by(sum(log_sigmoid(t)), element(softmax(column(t, 0)), 1));
      }, x);
    }
    {
      Tensor scores = random_tensor(rng, {3, 5});
      const std::vector<int> targets{1, 4, 0};
      check_op([&](const Tensor& t) { return ce_mean(t, targets); }, scores);
    }
    {
      // softmax on rows, reshape pass-through
      Tensor x = random_tensor(rng, {2, 4});
      auto coeff = random_coeff(rng, 8);
      check_op([&](const Tensor& t) { return weighted_readout(softmax(t), coeff); }, x);
      check_op([&](const Tensor& t) {
        return weighted_readout(reshape(t, {4, 2}), coeff);
      }, x);
    }
  }
}

TEST_CASE("seeded determinism and stream splitting") {
  RngState a(42);
  RngState b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // Child streams depend only on the parent key and label, not its position.
  RngState p1(7);
  RngState p2(7);
  for (int i = 0; i < 10; ++i) p2.next_u64();
  RngState c1 = p1.split("gumbel");
  RngState c2 = p2.split("gumbel");
  for (int i = 0; i < 50; ++i) CHECK(c1.next_u64() == c2.next_u64());

  RngState d1 = p1.split("shuffle");
  CHECK(d1.next_u64() != c1.split("x").next_u64());

  RngState e1 = p1.split("epoch", 3);
  RngState e2 = RngState(7).split("epoch", 3);
  for (int i = 0; i < 20; ++i) CHECK(e1.next_u64() == e2.next_u64());
}

TEST_CASE("uniform excludes endpoints; gumbel sample statistics") {
  RngState rng(99);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 200000; ++i) {
    const double u = rng.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);

  // Transform fixed point: u = exp(-1) maps to exactly 0.
  CHECK(-std::log(-std::log(std::exp(-1.0))) == 0.0);

  RngState g1(2024);
  Tensor s1 = sample_gumbel(g1, {100000});
  RngState g2(2024);
  Tensor s2 = sample_gumbel(g2, {100000});
  CHECK(s1.values() == s2.values());

  double mean_acc = 0.0;
  for (double v : s1.values()) mean_acc += v;
  mean_acc /= static_cast<double>(s1.numel());
  CHECK(mean_acc == doctest::Approx(0.5772156649).epsilon(0.04));
  CHECK(std::fabs(mean_acc - 0.5772156649) < 0.02);
}

TEST_CASE("tensors remain finite through public ops on finite inputs") {
  RngState rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {4, 4}, -1e6, 1e6);
    for (double v : log_sigmoid(x).values()) CHECK(std::isfinite(v));
    for (double v : softmax(x).values()) CHECK(std::isfinite(v));
    for (double v : relu(x).values()) CHECK(std::isfinite(v));
  }
}
