#pragma once

#include <functional>
#include <vector>

#include "pslab/nn.hpp"

namespace pslab {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares stored analytic gradients of `params` against central finite
/// differences of `loss`. The caller must have populated the gradients
/// (usually by running `loss` plus a backward pass) before calling.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-12).
/// Throws NumericalError if the loss is ever non-finite.
GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<ParamRef>& params,
                                  double eps = 1e-6);

/// Same check for a raw buffer with an explicit analytic gradient.
GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  std::vector<double>& values,
                                  const std::vector<double>& analytic,
                                  double eps = 1e-6);

double relative_error(double analytic, double numeric);

}  // namespace pslab
