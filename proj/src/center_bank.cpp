#include "pslab/center_bank.hpp"

#include <cmath>

#include "pslab/errors.hpp"

namespace pslab {

CenterBank::CenterBank(std::size_t feature_dim, double alpha)
    : dim_(feature_dim) {
  if (feature_dim == 0) throw ConfigError("center dimension must be positive");
  set_alpha(alpha);
}

void CenterBank::set_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("center learning rate alpha must lie in [0, 1]");
  }
  alpha_ = alpha;
}

const std::vector<double>& CenterBank::center(int identity) const {
  auto it = centers_.find(identity);
  if (it == centers_.end()) {
    throw IndexError("no center for identity " + std::to_string(identity));
  }
  return it->second;
}

namespace {

void check_identity(int identity) {
  if (identity == kUnknownLabel) {
    throw ContractError("unknown-person feature reached the center loss");
  }
  if (identity < 0) {
    throw ContractError("background feature reached the center loss");
  }
}

void check_batch(const Tensor& features, std::span<const int> labels,
                 std::size_t dim) {
  if (features.rows() != labels.size()) {
    throw ShapeError("center loss: feature/label count mismatch");
  }
  if (features.cols() != dim) {
    throw ShapeError("center loss: feature dimension " +
                     std::to_string(features.cols()) + " != bank dimension " +
                     std::to_string(dim));
  }
  for (int y : labels) check_identity(y);
}

}  // namespace

void CenterBank::set_center(int identity, std::vector<double> value) {
  check_identity(identity);
  if (value.size() != dim_) throw ShapeError("center dimension mismatch");
  for (double v : value)
    if (!std::isfinite(v)) throw NumericalError("non-finite center value");
  centers_[identity] = std::move(value);
}

void CenterBank::ensure_centers(const Tensor& features,
                                std::span<const int> labels) {
  check_batch(features, labels, dim_);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!contains(labels[i])) {
      auto row = features.row_span(i);
      set_center(labels[i], std::vector<double>(row.begin(), row.end()));
    }
  }
}

double center_loss_forward(const Tensor& features, std::span<const int> labels,
                           const CenterBank& bank) {
  check_batch(features, labels, bank.feature_dim());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    loss += squared_distance(features.row_span(i), bank.center(labels[i]));
  return 0.5 * loss;
}

Tensor center_loss_backward(const Tensor& features, std::span<const int> labels,
                            const CenterBank& bank) {
  check_batch(features, labels, bank.feature_dim());
  Tensor grad(features.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& c = bank.center(labels[i]);
    auto x = features.row_span(i);
    auto g = grad.row_span(i);
    for (std::size_t k = 0; k < x.size(); ++k) g[k] = x[k] - c[k];
  }
  return grad;
}

std::map<int, std::vector<double>> center_deltas(const Tensor& features,
                                                 std::span<const int> labels,
                                                 const CenterBank& bank) {
  check_batch(features, labels, bank.feature_dim());
  std::map<int, std::vector<double>> sums;
  std::map<int, int> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& c = bank.center(labels[i]);
    auto& s = sums[labels[i]];
    s.resize(c.size(), 0.0);
    auto x = features.row_span(i);
    for (std::size_t k = 0; k < c.size(); ++k) s[k] += c[k] - x[k];
    ++counts[labels[i]];
  }
  for (auto& [id, s] : sums) {
    const double denom = 1.0 + counts[id];
    for (double& v : s) v /= denom;
  }
  return sums;
}

void center_update(CenterBank& bank, const Tensor& features,
                   std::span<const int> labels) {
  const auto deltas = center_deltas(features, labels, bank);
  for (const auto& [id, delta] : deltas) {
    std::vector<double> c = bank.center(id);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] -= bank.alpha() * delta[k];
    bank.set_center(id, std::move(c));
  }
}

}  // namespace pslab
