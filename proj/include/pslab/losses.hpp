#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "pslab/rng.hpp"
#include "pslab/tensor.hpp"

namespace pslab {

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Mean softmax cross-entropy over the batch. Gradient is
/// (softmax - onehot) / batch.
LossGrad softmax_ce(const Tensor& logits, std::span<const int> labels);

/// Softmax cross-entropy whose normalizer only sums over `sampled_classes`.
/// Logits outside the set receive zero gradient.
LossGrad rss_loss(const Tensor& logits, std::span<const int> labels,
                  const std::set<int>& sampled_classes);

/// Classes present in `labels` plus up to K distinct other classes drawn
/// uniformly without replacement from [0, class_count). K is clamped to the
/// number of classes left after removing the positives.
std::set<int> sample_rss_classes(std::span<const int> labels,
                                 int class_count, int negative_samples,
                                 Rng& rng);

/// Elementwise 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise; summed per row,
/// then averaged over rows.
LossGrad smoothed_l1(const Tensor& predicted, const Tensor& target);

struct LossBundle {
  double id_loss = 0.0;
  double center_loss = 0.0;
  double bbox_loss = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

LossBundle total_loss(double id_loss, double bbox_loss, double center_loss,
                      double lambda);

}  // namespace pslab
