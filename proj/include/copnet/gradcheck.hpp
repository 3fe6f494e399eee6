#pragma once

#include <functional>

#include "copnet/tensor.hpp"

namespace copnet {

// Central-difference gradient estimate of a scalar-valued function:
// (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) per coordinate. f must be
// deterministic and must return a scalar tensor; it is re-invoked on a fresh
// leaf copy of x for every probe.
Tensor finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

// Largest |a_i - b_i| / max(1, |b_i|) over all coordinates; the mixed
// absolute/relative metric used by the gradient-oracle tests.
double max_rel_error(const std::vector<double>& analytic,
                     const std::vector<double>& estimate);

}  // namespace copnet
