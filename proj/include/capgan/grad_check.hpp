#pragma once

#include <functional>
#include <string>

#include "capgan/param_store.hpp"

namespace capgan {

/// Scalar objective over a store. When `with_grad` is set the function must
/// accumulate d(objective)/d(param) into `params.grads()`; grad_check zeroes
/// them beforehand.
using ObjectiveFn = std::function<double(ParamStore& params, bool with_grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares analytic gradients with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) at every scalar parameter.
/// Throws std::domain_error if the objective is ever non-finite.
GradCheckResult grad_check(const ObjectiveFn& f, ParamStore& params, double eps = 1e-5);

}  // namespace capgan
