#include "pslab/nn.hpp"

#include <cmath>

#include "pslab/errors.hpp"

namespace pslab {

LinearLayer::LinearLayer(std::size_t in_dim, std::size_t out_dim)
    : weights({out_dim, in_dim}), bias({out_dim}) {}

void LinearLayer::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim()));
  for (double& w : weights.values()) w = rng.uniform(-bound, bound);
  std::fill(bias.values().begin(), bias.values().end(), 0.0);
}

void LinearLayer::zero_grad() {
  weights.zero_grad();
  bias.zero_grad();
}

Tensor linear_forward(const Tensor& input, const LinearLayer& layer) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  if (input.cols() != in) {
    throw ShapeError("linear_forward: input " + input.shape_string() +
                     " does not match layer " + layer.weights.shape_string());
  }
  const std::size_t batch = input.rows();
  Tensor result({batch, out});
  const double* w = layer.weights.values().data();
  const double* b = layer.bias.values().data();
  for (std::size_t r = 0; r < batch; ++r) {
    const double* x = input.values().data() + r * in;
    double* y = result.values().data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * x[i];
      y[o] = acc;
    }
  }
  return result;
}

Tensor linear_backward(const Tensor& input, LinearLayer& layer,
                       const Tensor& grad_output) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  const std::size_t batch = input.rows();
  if (grad_output.rows() != batch || grad_output.cols() != out) {
    throw ShapeError("linear_backward: upstream gradient " +
                     grad_output.shape_string() + " does not match output");
  }
  auto& gw = layer.weights.grad();
  auto& gb = layer.bias.grad();
  const double* w = layer.weights.values().data();
  Tensor grad_input({batch, in});
  for (std::size_t r = 0; r < batch; ++r) {
    const double* x = input.values().data() + r * in;
    const double* g = grad_output.values().data() + r * out;
    double* gx = grad_input.values().data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      gb[o] += go;
      double* gwo = gw.data() + o * in;
      const double* wo = w + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gwo[i] += go * x[i];
        gx[i] += go * wo[i];
      }
    }
  }
  return grad_input;
}

Tensor relu_forward(const Tensor& z) {
  Tensor out = z;
  out.drop_grad();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& z, const Tensor& grad_output) {
  if (z.size() != grad_output.size()) {
    throw ShapeError("relu_backward: gradient size mismatch");
  }
  Tensor g = grad_output;
  g.drop_grad();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (z[i] <= 0.0) g[i] = 0.0;
  return g;
}

void check_keep_probability(double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ConfigError("dropout keep probability must lie in (0, 1], got " +
                      std::to_string(p));
  }
}

std::pair<Tensor, DropoutMask> dropout_forward(const Tensor& y, double p,
                                               Rng& rng, Mode mode) {
  check_keep_probability(p);
  DropoutMask mask{p, std::vector<double>(y.size(), 1.0), mode};
  Tensor out = y;
  out.drop_grad();
  if (mode == Mode::kInference) {
    for (double& v : out.values()) v *= p;
    return {std::move(out), std::move(mask)};
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    // p == 1 never consumes randomness
    const double r = (p >= 1.0 || rng.bernoulli(p)) ? 1.0 : 0.0;
    mask.mask[i] = r;
    out[i] = r * y[i];
  }
  return {std::move(out), std::move(mask)};
}

Tensor dropout_backward(const DropoutMask& mask, const Tensor& grad_output) {
  if (mask.mask.size() != grad_output.size()) {
    throw ShapeError("dropout_backward: mask size mismatch");
  }
  Tensor g = grad_output;
  g.drop_grad();
  const double scale =
      mask.mode == Mode::kInference ? mask.keep_probability : 1.0;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask.mask[i] * scale;
  return g;
}

Sequential& Sequential::add(Layer layer) {
  layers_.push_back(std::move(layer));
  clear_tape();
  return *this;
}

void Sequential::clear_tape() {
  inputs_.clear();
  masks_.clear();
  taped_ = false;
}

Tensor Sequential::forward(const Tensor& input, Mode mode, Rng* rng) {
  inputs_.assign(layers_.size(), Tensor());
  masks_.assign(layers_.size(), DropoutMask{});
  Tensor x = input;
  x.drop_grad();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    inputs_[i] = x;
    if (auto* lin = std::get_if<LinearLayer>(&layers_[i])) {
      x = linear_forward(x, *lin);
    } else if (std::holds_alternative<ReluLayer>(layers_[i])) {
      x = relu_forward(x);
    } else {
      auto& drop = std::get<DropoutLayer>(layers_[i]);
      if (mode == Mode::kTraining && drop.frozen_mask) {
        if (drop.frozen_mask->size() != x.size()) {
          throw ShapeError("frozen dropout mask does not match activations");
        }
        DropoutMask m{drop.keep_probability, *drop.frozen_mask, mode};
        for (std::size_t k = 0; k < x.size(); ++k) x[k] *= m.mask[k];
        masks_[i] = std::move(m);
      } else {
        if (mode == Mode::kTraining && rng == nullptr) {
          throw StateError("training-mode dropout needs a random stream");
        }
        Rng unused(0);
        auto [out, m] = dropout_forward(x, drop.keep_probability,
                                        rng ? *rng : unused, mode);
        x = std::move(out);
        masks_[i] = std::move(m);
      }
    }
  }
  taped_ = true;
  return x;
}

Tensor Sequential::infer(const Tensor& input) const {
  Tensor x = input;
  x.drop_grad();
  for (const auto& layer : layers_) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      x = linear_forward(x, *lin);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      x = relu_forward(x);
    } else {
      const double p = std::get<DropoutLayer>(layer).keep_probability;
      for (double& v : x.values()) v *= p;
    }
  }
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output) {
  if (!taped_) throw StateError("backward called before forward");
  Tensor g = grad_output;
  g.drop_grad();
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (auto* lin = std::get_if<LinearLayer>(&layers_[k])) {
      g = linear_backward(inputs_[k], *lin, g);
    } else if (std::holds_alternative<ReluLayer>(layers_[k])) {
      g = relu_backward(inputs_[k], g);
    } else {
      g = dropout_backward(masks_[k], g);
    }
  }
  return g;
}

std::vector<DropoutMask> Sequential::recorded_masks() const {
  std::vector<DropoutMask> out;
  for (std::size_t i = 0; i < layers_.size() && taped_; ++i)
    if (std::holds_alternative<DropoutLayer>(layers_[i])) out.push_back(masks_[i]);
  return out;
}

std::vector<ParamRef> Sequential::parameters(const std::string& prefix) {
  std::vector<ParamRef> params;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* lin = std::get_if<LinearLayer>(&layers_[i])) {
      const std::string base = prefix + "." + std::to_string(i);
      params.push_back({base + ".weight", &lin->weights});
      params.push_back({base + ".bias", &lin->bias});
    }
  }
  return params;
}

void Sequential::zero_grad() {
  for (auto& layer : layers_)
    if (auto* lin = std::get_if<LinearLayer>(&layer)) lin->zero_grad();
}

void sgd_step(const std::vector<ParamRef>& params, double learning_rate) {
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) continue;
    auto& v = p.tensor->values();
    const auto& g = p.tensor->grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
  }
}

}  // namespace pslab
