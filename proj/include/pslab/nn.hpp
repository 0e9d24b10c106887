#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pslab/rng.hpp"
#include "pslab/tensor.hpp"

namespace pslab {

enum class Mode { kTraining, kInference };

/// Fully connected layer, out = W x + b with W stored outDim x inDim.
struct LinearLayer {
  Tensor weights;  // outDim x inDim
  Tensor bias;     // outDim

  LinearLayer() = default;
  LinearLayer(std::size_t in_dim, std::size_t out_dim);

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  // He-style uniform init scaled by fan-in; bias starts at zero.
  void init(Rng& rng);
  void zero_grad();
};

struct DropoutMask {
  double keep_probability = 1.0;
  std::vector<double> mask;  // entries are exactly 0.0 or 1.0
  Mode mode = Mode::kTraining;
};

Tensor linear_forward(const Tensor& input, const LinearLayer& layer);
// Accumulates into layer gradients and returns d(loss)/d(input).
Tensor linear_backward(const Tensor& input, LinearLayer& layer,
                       const Tensor& grad_output);

Tensor relu_forward(const Tensor& z);
Tensor relu_backward(const Tensor& z, const Tensor& grad_output);

void check_keep_probability(double p);

// Training mode draws r ~ Bernoulli(p) per element and returns r * y with no
// rescaling. Inference mode returns p * y with an all-ones mask.
std::pair<Tensor, DropoutMask> dropout_forward(const Tensor& y, double p,
                                               Rng& rng,
                                               Mode mode = Mode::kTraining);
Tensor dropout_backward(const DropoutMask& mask, const Tensor& grad_output);

struct ReluLayer {};
struct DropoutLayer {
  double keep_probability = 0.5;
  // When set, training-mode passes reuse this mask instead of sampling. The
  // gradient checker relies on this to hold the network deterministic.
  std::optional<std::vector<double>> frozen_mask;
};

using Layer = std::variant<LinearLayer, ReluLayer, DropoutLayer>;

/// A parameter tensor paired with its gradient, as seen by optimizers and
/// the gradient checker.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

/// Layer stack with a recorded tape: forward() stores what backward() needs.
class Sequential {
 public:
  Sequential() = default;

  Sequential& add(Layer layer);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Tensor forward(const Tensor& input, Mode mode, Rng* rng);
  // Inference-mode pass that records nothing.
  Tensor infer(const Tensor& input) const;
  // Throws StateError if no forward pass has been recorded.
  Tensor backward(const Tensor& grad_output);
  bool has_tape() const { return taped_; }
  void clear_tape();

  // Masks drawn during the last training-mode forward, in layer order.
  std::vector<DropoutMask> recorded_masks() const;

  std::vector<ParamRef> parameters(const std::string& prefix);
  void zero_grad();

 private:
  std::vector<Layer> layers_;
  std::vector<Tensor> inputs_;  // input to each layer
  std::vector<DropoutMask> masks_;
  bool taped_ = false;
};

void sgd_step(const std::vector<ParamRef>& params, double learning_rate);

}  // namespace pslab
