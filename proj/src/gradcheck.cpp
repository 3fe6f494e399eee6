#include "copnet/gradcheck.hpp"

#include <cmath>

#include "copnet/common.hpp"

namespace copnet {

Tensor finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
  if (eps <= 0.0) throw ContractError("finite_diff_check: eps must be positive");
  std::vector<double> base = x.values();
  std::vector<double> est(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base;
    std::vector<double> minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor::from(x.shape(), std::move(plus))).value();
    const double fm = f(Tensor::from(x.shape(), std::move(minus))).value();
    est[i] = (fp - fm) / (2.0 * eps);
  }
  return Tensor::from(x.shape(), std::move(est));
}

double max_rel_error(const std::vector<double>& analytic,
                     const std::vector<double>& estimate) {
  if (analytic.size() != estimate.size())
    throw ShapeError("max_rel_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1.0, std::fabs(estimate[i]));
    worst = std::max(worst, std::fabs(analytic[i] - estimate[i]) / denom);
  }
  return worst;
}

}  // namespace copnet
