#include "pslab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pslab/errors.hpp"

namespace pslab {

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be batch x classes");
  if (labels.size() != logits.rows()) {
    throw ShapeError("label count " + std::to_string(labels.size()) +
                     " does not match batch " + std::to_string(logits.rows()));
  }
}

// Cross-entropy of one row against `label`, normalizing only over `allowed`
// (every class when null). Writes softmax - onehot into grad_row.
double restricted_row(std::span<const double> row, int label,
                      const std::vector<char>* allowed,
                      std::span<double> grad_row) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < row.size(); ++c)
    if (!allowed || (*allowed)[c]) max_logit = std::max(max_logit, row[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (allowed && !(*allowed)[c]) {
      grad_row[c] = 0.0;
      continue;
    }
    grad_row[c] = std::exp(row[c] - max_logit);
    sum += grad_row[c];
  }
  const double log_sum = std::log(sum);
  for (std::size_t c = 0; c < row.size(); ++c) grad_row[c] /= sum;
  grad_row[static_cast<std::size_t>(label)] -= 1.0;
  return log_sum - (row[static_cast<std::size_t>(label)] - max_logit);
}

}  // namespace

LossGrad softmax_ce(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t batch = logits.rows();
  const int classes = static_cast<int>(logits.cols());
  LossGrad out{0.0, Tensor(logits.shape())};
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] < 0 || labels[r] >= classes) {
      throw IndexError("label " + std::to_string(labels[r]) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
    out.loss += restricted_row(logits.row_span(r), labels[r], nullptr,
                               out.grad.row_span(r));
  }
  const double inv = 1.0 / static_cast<double>(batch);
  out.loss *= inv;
  for (double& g : out.grad.values()) g *= inv;
  return out;
}

LossGrad rss_loss(const Tensor& logits, std::span<const int> labels,
                  const std::set<int>& sampled_classes) {
  check_labels(logits, labels);
  const std::size_t batch = logits.rows();
  const int classes = static_cast<int>(logits.cols());
  std::vector<char> allowed(static_cast<std::size_t>(classes), 0);
  for (int c : sampled_classes) {
    if (c < 0 || c >= classes) {
      throw IndexError("sampled class " + std::to_string(c) + " out of range");
    }
    allowed[static_cast<std::size_t>(c)] = 1;
  }
  LossGrad out{0.0, Tensor(logits.shape())};
  for (std::size_t r = 0; r < batch; ++r) {
    const int y = labels[r];
    if (y == -1) {
      throw ContractError("unknown-person label reached the sampled softmax");
    }
    if (y < 0 || y >= classes || !allowed[static_cast<std::size_t>(y)]) {
      throw ContractError("label " + std::to_string(y) +
                          " is not in the sampled class set");
    }
    out.loss += restricted_row(logits.row_span(r), y, &allowed,
                               out.grad.row_span(r));
  }
  const double inv = 1.0 / static_cast<double>(batch);
  out.loss *= inv;
  for (double& g : out.grad.values()) g *= inv;
  return out;
}

std::set<int> sample_rss_classes(std::span<const int> labels, int class_count,
                                 int negative_samples, Rng& rng) {
  if (negative_samples < 1) {
    throw ConfigError("sampled softmax needs at least one negative class");
  }
  std::set<int> chosen(labels.begin(), labels.end());
  std::vector<int> rest;
  for (int c = 0; c < class_count; ++c)
    if (!chosen.count(c)) rest.push_back(c);
  const std::size_t k =
      std::min(rest.size(), static_cast<std::size_t>(negative_samples));
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(rest.size() - i);
    std::swap(rest[i], rest[j]);
    chosen.insert(rest[i]);
  }
  return chosen;
}

LossGrad smoothed_l1(const Tensor& predicted, const Tensor& target) {
  if (!predicted.same_shape(target)) {
    throw ShapeError("smoothed_l1: " + predicted.shape_string() + " vs " +
                     target.shape_string());
  }
  LossGrad out{0.0, Tensor(predicted.shape())};
  const double inv = 1.0 / static_cast<double>(predicted.rows());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - target[i];
    if (std::abs(e) < 1.0) {
      out.loss += 0.5 * e * e;
      out.grad[i] = e * inv;
    } else {
      out.loss += std::abs(e) - 0.5;
      out.grad[i] = (e > 0.0 ? 1.0 : -1.0) * inv;
    }
  }
  out.loss *= inv;
  return out;
}

LossBundle total_loss(double id_loss, double bbox_loss, double center_loss,
                      double lambda) {
  if (!(lambda >= 0.0)) {
    throw ConfigError("center loss weight must be non-negative");
  }
  for (double v : {id_loss, bbox_loss, center_loss}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw NumericalError("loss components must be finite and non-negative");
    }
  }
  LossBundle b;
  b.id_loss = id_loss;
  b.bbox_loss = bbox_loss;
  b.center_loss = center_loss;
  b.lambda = lambda;
  b.total = (id_loss + bbox_loss) + lambda * center_loss;
  return b;
}

}  // namespace pslab
