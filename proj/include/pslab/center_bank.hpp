#pragma once

#include <map>
#include <span>
#include <vector>

#include "pslab/tensor.hpp"

namespace pslab {

/// Identity label reserved for annotated persons without an identity.
inline constexpr int kUnknownLabel = -1;
/// Label reserved for non-person candidates.
inline constexpr int kBackgroundLabel = -2;

/// Learned per-identity feature centers with their update rate.
class CenterBank {
 public:
  CenterBank() = default;
  CenterBank(std::size_t feature_dim, double alpha);

  std::size_t feature_dim() const { return dim_; }
  double alpha() const { return alpha_; }
  void set_alpha(double alpha);

  bool contains(int identity) const { return centers_.count(identity) != 0; }
  const std::vector<double>& center(int identity) const;
  const std::map<int, std::vector<double>>& centers() const { return centers_; }
  std::size_t size() const { return centers_.size(); }
  bool empty() const { return centers_.empty(); }

  void set_center(int identity, std::vector<double> value);
  // Seeds missing identities with the first feature seen for them.
  void ensure_centers(const Tensor& features, std::span<const int> labels);

 private:
  std::size_t dim_ = 0;
  double alpha_ = 0.5;
  std::map<int, std::vector<double>> centers_;
};

/// 0.5 * sum_i ||x_i - c_{y_i}||^2.
double center_loss_forward(const Tensor& features, std::span<const int> labels,
                           const CenterBank& bank);

/// Row i is x_i - c_{y_i}.
Tensor center_loss_backward(const Tensor& features, std::span<const int> labels,
                            const CenterBank& bank);

/// Per-class step Delta c_j = sum_{y_i=j}(c_j - x_i) / (1 + n_j).
std::map<int, std::vector<double>> center_deltas(const Tensor& features,
                                                 std::span<const int> labels,
                                                 const CenterBank& bank);

/// Applies c_j <- c_j - alpha * Delta c_j for every class in the batch.
void center_update(CenterBank& bank, const Tensor& features,
                   std::span<const int> labels);

}  // namespace pslab
