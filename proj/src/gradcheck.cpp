#include "pslab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pslab/errors.hpp"

namespace pslab {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double checked_loss(const std::function<double()>& loss) {
  const double v = loss();
  if (!std::isfinite(v)) {
    throw NumericalError("finite_diff_check: loss is not finite (" +
                         std::to_string(v) + ")");
  }
  return v;
}

void check_buffer(const std::function<double()>& loss,
                  std::vector<double>& values,
                  const std::vector<double>& analytic, double eps,
                  GradCheckResult& result) {
  if (analytic.size() != values.size()) {
    throw ShapeError("finite_diff_check: gradient size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double plus = checked_loss(loss);
    values[i] = saved - eps;
    const double minus = checked_loss(loss);
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    result.max_relative_error =
        std::max(result.max_relative_error, relative_error(analytic[i], numeric));
    ++result.checked;
  }
}

}  // namespace

GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<ParamRef>& params,
                                  double eps) {
  GradCheckResult result;
  checked_loss(loss);
  for (const auto& p : params) {
    // copy: the loss callback may overwrite gradients while we probe
    const std::vector<double> analytic =
        p.tensor->has_grad() ? p.tensor->grad()
                             : std::vector<double>(p.tensor->size(), 0.0);
    check_buffer(loss, p.tensor->values(), analytic, eps, result);
  }
  return result;
}

GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  std::vector<double>& values,
                                  const std::vector<double>& analytic,
                                  double eps) {
  GradCheckResult result;
  checked_loss(loss);
  check_buffer(loss, values, analytic, eps, result);
  return result;
}

}  // namespace pslab
