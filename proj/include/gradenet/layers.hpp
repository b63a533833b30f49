#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "gradenet/ops.hpp"

namespace gradenet {

enum class LayerKind { conv2d, batchnorm, relu, sigmoid, maxpool, flatten, dense, dropout };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
  }
  return "?";
}

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// One stage of a network. Operates on batched tensors ([N,C,H,W] before the
/// flatten, [N,D] after it) and caches what its backward pass needs.
template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  /// Per-sample output shape for a per-sample input shape.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) = 0;
  /// Overwrites parameter gradients; returns the input gradient unless
  /// want_input is false (then an empty tensor).
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  /// Persisted non-trainable tensors (batchnorm running statistics).
  virtual std::vector<Tensor<T>*> buffers() { return {}; }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  std::string name;
  bool trainable = true;
};

namespace detail {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <class T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

inline Shape with_batch(std::size_t n, const Shape& inner) {
  Shape s{n};
  s.insert(s.end(), inner.begin(), inner.end());
  return s;
}

}  // namespace detail

template <class T>
class Conv2dLayer final : public Layer<T> {
 public:
  Conv2dLayer(std::size_t in_channels, std::size_t filters, std::size_t size = 3)
      : kernels_("kernels", Tensor<T>(Shape{filters, in_channels, size, size})),
        bias_("bias", Tensor<T>(Shape{filters})) {}

  void initialize(Rng& rng) {
    const auto& s = kernels_.value.shape();
    detail::glorot_uniform(kernels_.value, s[1] * s[2] * s[3], s[0] * s[2] * s[3], rng);
    bias_.value.fill(T{0});
  }

  LayerKind kind() const override { return LayerKind::conv2d; }

  Shape output_shape(const Shape& in) const override {
    const auto& k = kernels_.value.shape();
    if (in.size() != 3 || in[0] != k[1])
      throw ShapeError("conv2d input " + to_string(in) + " does not match kernels " + to_string(k));
    return {k[0], conv_output_dim(in[1], k[2]), conv_output_dim(in[2], k[3])};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    input_ = x;
    return conv2d(x, params());
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    auto g = conv2d_backward(input_, params(), grad_out, want_input);
    kernels_.grad = std::move(g.kernels);
    bias_.grad = std::move(g.bias);
    return std::move(g.input);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2dLayer>(*this); }
  std::vector<Parameter<T>*> parameters() override { return {&kernels_, &bias_}; }

  std::size_t filters() const { return kernels_.value.dim(0); }
  Parameter<T>& kernels() { return kernels_; }
  Parameter<T>& bias() { return bias_; }

 private:
  ConvParams<T> params() const { return {kernels_.value, bias_.value, 1, 0}; }

  Parameter<T> kernels_, bias_;
  Tensor<T> input_;
};

/// A frozen batchnorm layer always normalizes with its running statistics and
/// leaves them untouched.
template <class T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(std::size_t channels)
      : state_(channels), gamma_("gamma", state_.gamma), beta_("beta", state_.beta) {}

  LayerKind kind() const override { return LayerKind::batchnorm; }
  Shape output_shape(const Shape& in) const override {
    if (in.empty() || in[0] != state_.gamma.size())
      throw ShapeError("batchnorm input " + to_string(in) + " does not match " +
                       std::to_string(state_.gamma.size()) + " channels");
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng&) override {
    sync_in();
    const Mode effective = this->trainable ? mode : Mode::infer;
    return batchnorm(x, state_, effective, &cache_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    sync_in();
    auto g = batchnorm_backward(grad_out, state_, cache_);
    gamma_.grad = std::move(g.gamma);
    beta_.grad = std::move(g.beta);
    return want_input ? std::move(g.input) : Tensor<T>();
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNormLayer>(*this); }
  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> buffers() override { return {&state_.running_mean, &state_.running_var}; }

  const BatchNormState<T>& state() {
    sync_in();
    return state_;
  }

 private:
  // gamma/beta live in the Parameter objects (the optimizer updates those).
  void sync_in() {
    state_.gamma = gamma_.value;
    state_.beta = beta_.value;
  }

  BatchNormState<T> state_;
  Parameter<T> gamma_, beta_;
  BatchNormCache<T> cache_;
};

template <class T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(Activation a) : act_(a) {}

  LayerKind kind() const override {
    return act_ == Activation::relu ? LayerKind::relu : LayerKind::sigmoid;
  }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    Tensor<T> y = activation(x, act_);
    cached_ = act_ == Activation::relu ? x : y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    if (!want_input) return {};
    return activation_backward(cached_, grad_out, act_);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ActivationLayer>(*this); }

 private:
  Activation act_;
  Tensor<T> cached_;
};

template <class T>
class MaxPoolLayer final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::maxpool; }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3) throw ShapeError("maxpool expects [C,H,W], got " + to_string(in));
    return {in[0], pool_output_dim(in[1]), pool_output_dim(in[2])};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    auto r = maxpool2d(x);
    in_shape_ = x.shape();
    argmax_ = std::move(r.argmax);
    return std::move(r.output);
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    if (!want_input) return {};
    return maxpool2d_backward(grad_out, std::span<const std::uint32_t>(argmax_), in_shape_);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }

 private:
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

template <class T>
class FlattenLayer final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  Shape output_shape(const Shape& in) const override { return {element_count(in)}; }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    if (!want_input) return {};
    return grad_out.reshaped(in_shape_);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FlattenLayer>(*this); }

 private:
  Shape in_shape_;
};

template <class T>
class DenseLayer final : public Layer<T> {
 public:
  DenseLayer(std::size_t inputs, std::size_t units)
      : weights_("weights", Tensor<T>(Shape{units, inputs})), bias_("bias", Tensor<T>(Shape{units})) {}

  void initialize(Rng& rng) {
    detail::glorot_uniform(weights_.value, weights_.value.dim(1), weights_.value.dim(0), rng);
    bias_.value.fill(T{0});
  }

  LayerKind kind() const override { return LayerKind::dense; }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 1 || in[0] != weights_.value.dim(1))
      throw ShapeError("dense input " + to_string(in) + " does not match weights " +
                       to_string(weights_.value.shape()));
    return {weights_.value.dim(0)};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, Rng&) override {
    input_ = x;
    return dense(x, weights_.value, bias_.value);
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    auto g = dense_backward(input_, weights_.value, grad_out);
    weights_.grad = std::move(g.weights);
    bias_.grad = std::move(g.bias);
    return want_input ? std::move(g.input) : Tensor<T>();
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<DenseLayer>(*this); }
  std::vector<Parameter<T>*> parameters() override { return {&weights_, &bias_}; }

  std::size_t units() const { return weights_.value.dim(0); }
  std::size_t inputs() const { return weights_.value.dim(1); }
  Parameter<T>& weights() { return weights_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weights_, bias_;
  Tensor<T> input_;
};

/// `enabled = false` turns the layer into an identity in both modes.
template <class T>
class DropoutLayer final : public Layer<T> {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0))
      throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }

  LayerKind kind() const override { return LayerKind::dropout; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) override {
    return dropout(x, enabled ? rate_ : 0.0, mode, rng, &mask_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool want_input) override {
    if (!want_input) return {};
    return dropout_backward(grad_out, mask_);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<DropoutLayer>(*this); }

  double rate() const { return rate_; }
  bool enabled = true;

 private:
  double rate_;
  DropoutMask<T> mask_;
};

}  // namespace gradenet
