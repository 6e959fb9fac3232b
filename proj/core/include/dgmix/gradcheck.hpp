#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dgmix/tensor.hpp"

namespace dgmix {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Relative error between analytic and numeric derivatives.
inline double grad_rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
}

/// Central finite differences against analytic gradients, runs at 64-bit.
///
/// `f` must be a deterministic scalar function of the tensors behind `params`
/// (it is re-evaluated with each element nudged by +/-eps). `analytic[i]` holds
/// the claimed gradient for params[i]; the report carries the worst element.
inline GradCheckReport grad_check(const std::function<double()>& f,
                                  const std::vector<std::pair<std::string, Tensor*>>& params,
                                  const std::vector<const Tensor*>& analytic, double eps) {
  if (eps <= 0) throw ValidationError("grad_check: eps must be positive");
  if (params.size() != analytic.size()) {
    throw UsageError("grad_check: analytic gradient count does not match parameter count");
  }
  const double base = f();
  if (f() != base) {
    throw UsageError("grad_check: function is not deterministic (repeat evaluation differs)");
  }
  if (!std::isfinite(base)) throw NumericError("grad_check: function value is not finite");

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& theta = *params[pi].second;
    const Tensor& grad = *analytic[pi];
    if (!theta.same_shape(grad)) {
      throw ShapeError("grad_check: gradient shape " + shape_str(grad.shape) +
                       " does not match parameter " + params[pi].first + " " +
                       shape_str(theta.shape));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + eps;
      const double fp = f();
      theta[i] = saved - eps;
      const double fm = f();
      theta[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel = grad_rel_err(grad[i], numeric);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].first;
        report.worst_index = i;
        report.worst_analytic = grad[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace dgmix
