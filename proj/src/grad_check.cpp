#include "capgan/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace capgan {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_finite(const ObjectiveFn& f, ParamStore& params) {
  const double v = f(params, false);
  if (!std::isfinite(v)) throw std::domain_error("grad_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ObjectiveFn& f, ParamStore& params, double eps) {
  params.zero_grad();
  const double base = f(params, true);
  if (!std::isfinite(base)) throw std::domain_error("grad_check: objective is not finite");
  const GradBuffer analytic = params.grads();

  GradCheckResult result;
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto values = params.value(s).data();
    const auto grads = analytic[s].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = eval_finite(f, params);
      values[i] = saved - eps;
      const double down = eval_finite(f, params);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(grads[i], numeric);
      ++result.checked;
      if (err > result.max_relative_error || result.worst_param.empty()) {
        result.max_relative_error = err;
        result.worst_param = params.name(s);
        result.worst_index = i;
        result.analytic = grads[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace capgan
