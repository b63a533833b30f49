#pragma once

// Forward and backward kernels for the layer set used by the grading
// networks. Every kernel accepts a single sample or a batch with a leading
// batch axis, and returns tensors of the matching rank.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gradenet/error.hpp"
#include "gradenet/rng.hpp"
#include "gradenet/tensor.hpp"

namespace gradenet {

enum class Mode { train, infer };

/// Spatial output size of a convolution: (in - F + 2P) / S + 1.
/// Throws when the result is not a positive integer.
inline std::size_t conv_output_dim(std::size_t in, std::size_t filter, std::size_t padding = 0,
                                   std::size_t stride = 1) {
  const long long span = static_cast<long long>(in) + 2 * static_cast<long long>(padding) -
                         static_cast<long long>(filter);
  if (stride == 0 || span < 0 || span % static_cast<long long>(stride) != 0)
    throw ShapeError("convolution output dimension not a positive integer for input " +
                     std::to_string(in) + ", filter " + std::to_string(filter));
  return static_cast<std::size_t>(span) / stride + 1;
}

/// Pooling output size floor((in - window) / stride) + 1; trailing rows that do
/// not fill a window are dropped.
inline std::size_t pool_output_dim(std::size_t in, std::size_t window = 2, std::size_t stride = 2) {
  if (in < window)
    throw ShapeError("pooling window " + std::to_string(window) + " larger than input " +
                     std::to_string(in));
  return (in - window) / stride + 1;
}

namespace detail {

// Views a [C,H,W] or [N,C,H,W] tensor as N images.
struct ImageBatch {
  std::size_t n, c, h, w;
  bool batched;
};

template <class T>
ImageBatch image_batch(const Tensor<T>& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw ShapeError(std::string(op) + " expects [C,H,W] or [N,C,H,W], got " + to_string(t.shape()));
}

inline Shape image_shape(const ImageBatch& b, std::size_t c, std::size_t h, std::size_t w) {
  return b.batched ? Shape{b.n, c, h, w} : Shape{c, h, w};
}

// Columns [C*F*F, Ho*Wo] of a unit-stride valid convolution.
template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t f, T* cols) {
  const std::size_t ho = h - f + 1, wo = w - f + 1;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < f; ++ky)
      for (std::size_t kx = 0; kx < f; ++kx) {
        T* dst = cols + ((ch * f + ky) * f + kx) * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const T* src = img + (ch * h + y + ky) * w + kx;
          for (std::size_t x = 0; x < wo; ++x) dst[y * wo + x] = src[x];
        }
      }
}

template <class T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t f, T* img) {
  const std::size_t ho = h - f + 1, wo = w - f + 1;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < f; ++ky)
      for (std::size_t kx = 0; kx < f; ++kx) {
        const T* src = cols + ((ch * f + ky) * f + kx) * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          T* dst = img + (ch * h + y + ky) * w + kx;
          for (std::size_t x = 0; x < wo; ++x) dst[x] += src[y * wo + x];
        }
      }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T s{};
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <class T>
struct ConvParams {
  Tensor<T> kernels;  // [K, C, F, F]
  Tensor<T> bias;     // [K]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  Tensor<T> bias;
};

namespace detail {

template <class T>
ImageBatch check_conv(const Tensor<T>& input, const ConvParams<T>& p) {
  const auto b = image_batch(input, "conv2d");
  if (p.kernels.rank() != 4 || p.kernels.dim(2) != p.kernels.dim(3))
    throw ShapeError("conv2d kernels must be [K,C,F,F], got " + to_string(p.kernels.shape()));
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.kernels.dim(0))
    throw ShapeError("conv2d bias " + to_string(p.bias.shape()) + " does not match kernels " +
                     to_string(p.kernels.shape()));
  if (p.stride != 1 || p.padding != 0)
    throw ShapeError("conv2d supports stride 1 and padding 0 only");
  if (p.kernels.dim(1) != b.c)
    throw ShapeError("conv2d input " + to_string(input.shape()) + " does not match kernels " +
                     to_string(p.kernels.shape()));
  const std::size_t f = p.kernels.dim(2);
  if (b.h < f || b.w < f)
    throw ShapeError("conv2d input " + to_string(input.shape()) + " smaller than kernels " +
                     to_string(p.kernels.shape()));
  conv_output_dim(b.h, f, p.padding, p.stride);
  conv_output_dim(b.w, f, p.padding, p.stride);
  return b;
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  const auto b = detail::check_conv(input, p);
  const std::size_t k = p.kernels.dim(0), f = p.kernels.dim(2);
  const std::size_t ho = b.h - f + 1, wo = b.w - f + 1, plane = ho * wo, ck = b.c * f * f;
  Tensor<T> out(detail::image_shape(b, k, ho, wo));
  std::vector<T> cols(ck * plane);
  for (std::size_t n = 0; n < b.n; ++n) {
    detail::im2col(input.raw() + n * b.c * b.h * b.w, b.c, b.h, b.w, f, cols.data());
    T* dst = out.raw() + n * k * plane;
    for (std::size_t o = 0; o < k; ++o) {
      T* row = dst + o * plane;
      std::fill(row, row + plane, p.bias[o]);
      const T* wrow = p.kernels.raw() + o * ck;
      for (std::size_t c = 0; c < ck; ++c) detail::axpy(wrow[c], cols.data() + c * plane, row, plane);
    }
  }
  return out;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p, const Tensor<T>& grad_out,
                             bool want_input = true) {
  const auto b = detail::check_conv(input, p);
  const std::size_t k = p.kernels.dim(0), f = p.kernels.dim(2);
  const std::size_t ho = b.h - f + 1, wo = b.w - f + 1, plane = ho * wo, ck = b.c * f * f;
  if (grad_out.shape() != detail::image_shape(b, k, ho, wo))
    throw ShapeError("conv2d gradient " + to_string(grad_out.shape()) + " does not match output " +
                     to_string(detail::image_shape(b, k, ho, wo)));
  ConvGrads<T> g{want_input ? Tensor<T>(input.shape()) : Tensor<T>(), Tensor<T>(p.kernels.shape()),
                  Tensor<T>(p.bias.shape())};
  std::vector<T> cols(ck * plane), gcols(want_input ? ck * plane : 0);
  for (std::size_t n = 0; n < b.n; ++n) {
    detail::im2col(input.raw() + n * b.c * b.h * b.w, b.c, b.h, b.w, f, cols.data());
    const T* gout = grad_out.raw() + n * k * plane;
    for (std::size_t o = 0; o < k; ++o) {
      const T* grow = gout + o * plane;
      T* gw = g.kernels.raw() + o * ck;
      for (std::size_t c = 0; c < ck; ++c) gw[c] += detail::dot(grow, cols.data() + c * plane, plane);
      T s{};
      for (std::size_t i = 0; i < plane; ++i) s += grow[i];
      g.bias[o] += s;
    }
    if (!want_input) continue;
    std::fill(gcols.begin(), gcols.end(), T{});
    for (std::size_t o = 0; o < k; ++o) {
      const T* wrow = p.kernels.raw() + o * ck;
      for (std::size_t c = 0; c < ck; ++c)
        detail::axpy(wrow[c], gout + o * plane, gcols.data() + c * plane, plane);
    }
    detail::col2im_add(gcols.data(), b.c, b.h, b.w, f, g.input.raw() + n * b.c * b.h * b.w);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling

template <class T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

template <class T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t window = 2, std::size_t stride = 2) {
  const auto b = detail::image_batch(input, "maxpool2d");
  const std::size_t ho = pool_output_dim(b.h, window, stride);
  const std::size_t wo = pool_output_dim(b.w, window, stride);
  PoolResult<T> r{Tensor<T>(detail::image_shape(b, b.c, ho, wo)), {}};
  r.argmax.resize(r.output.size());
  std::size_t out = 0;
  for (std::size_t img = 0; img < b.n * b.c; ++img) {
    const std::size_t base = img * b.h * b.w;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < wo; ++x, ++out) {
        std::size_t best = base + y * stride * b.w + x * stride;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (y * stride + dy) * b.w + x * stride + dx;
            if (input[idx] > input[best]) best = idx;
          }
        r.output[out] = input[best];
        r.argmax[out] = static_cast<std::uint32_t>(best);
      }
  }
  return r;
}

template <class T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, std::span<const std::uint32_t> argmax,
                             const Shape& input_shape) {
  if (grad_out.size() != argmax.size())
    throw ShapeError("maxpool2d gradient " + to_string(grad_out.shape()) + " does not match routing");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, sigmoid };

template <class T>
T sigmoid_scalar(T a) {
  if (a >= T{0}) return T{1} / (T{1} + std::exp(-a));
  const T e = std::exp(a);
  return e / (T{1} + e);
}

template <class T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  } else {
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid_scalar(input[i]);
  }
  return out;
}

/// relu takes the forward input; sigmoid takes the forward output s and
/// applies s(1-s).
template <class T>
Tensor<T> activation_backward(const Tensor<T>& forward_value, const Tensor<T>& grad_out,
                              Activation kind) {
  if (forward_value.shape() != grad_out.shape())
    throw ShapeError("activation gradient " + to_string(grad_out.shape()) + " does not match " +
                     to_string(forward_value.shape()));
  Tensor<T> g(grad_out.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = forward_value[i] > T{0} ? grad_out[i] : T{0};
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = forward_value[i];
      g[i] = grad_out[i] * s * (T{1} - s);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected

template <class T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

namespace detail {

template <class T>
std::size_t check_dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0))
    throw ShapeError("dense weights " + to_string(w.shape()) + " and bias " + to_string(b.shape()) +
                     " are inconsistent");
  if ((x.rank() != 1 && x.rank() != 2) || x.shape().back() != w.dim(1))
    throw ShapeError("dense input " + to_string(x.shape()) + " does not match weights " +
                     to_string(w.shape()));
  return x.rank() == 1 ? 1 : x.dim(0);
}

}  // namespace detail

template <class T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  const std::size_t n = detail::check_dense(input, weights, bias);
  const std::size_t out_dim = weights.dim(0), in_dim = weights.dim(1);
  Tensor<T> y(input.rank() == 1 ? Shape{out_dim} : Shape{n, out_dim});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out_dim; ++o)
      y[s * out_dim + o] =
          bias[o] + detail::dot(weights.raw() + o * in_dim, input.raw() + s * in_dim, in_dim);
  return y;
}

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
  const std::size_t n = input.rank() == 1 ? 1 : input.dim(0);
  const std::size_t out_dim = weights.dim(0), in_dim = weights.dim(1);
  if (grad_out.size() != n * out_dim)
    throw ShapeError("dense gradient " + to_string(grad_out.shape()) + " does not match output");
  DenseGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), Tensor<T>(Shape{out_dim})};
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T go = grad_out[s * out_dim + o];
      if (go == T{0}) continue;
      g.bias[o] += go;
      detail::axpy(go, input.raw() + s * in_dim, g.weights.raw() + o * in_dim, in_dim);
      detail::axpy(go, weights.raw() + o * in_dim, g.input.raw() + s * in_dim, in_dim);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over the batch and spatial axes of [N,C,H,W] or [N,C].

template <class T>
struct BatchNormState {
  Tensor<T> gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma(Shape{channels}, T{1}),
        beta(Shape{channels}, T{0}),
        running_mean(Shape{channels}, T{0}),
        running_var(Shape{channels}, T{1}) {}
};

template <class T>
struct BatchNormCache {
  Tensor<T> normalized;  // x_hat
  std::vector<T> inv_std;
  Mode mode = Mode::infer;
};

template <class T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

namespace detail {

struct ChannelLayout {
  std::size_t n, c, spatial;
};

template <class T>
ChannelLayout channel_layout(const Tensor<T>& x, std::size_t channels) {
  if (x.rank() < 2 || x.dim(1) != channels)
    throw ShapeError("batchnorm input " + to_string(x.shape()) + " does not match " +
                     std::to_string(channels) + " channels");
  return {x.dim(0), channels, x.size() / (x.dim(0) * channels)};
}

}  // namespace detail

template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode,
                    BatchNormCache<T>* cache = nullptr) {
  if (!(state.epsilon > 0)) throw ConfigError("batchnorm epsilon must be positive");
  const auto l = detail::channel_layout(input, state.gamma.size());
  if (mode == Mode::train && l.n < 2)
    throw ShapeError("batchnorm in train mode needs a batch of at least 2, got " + std::to_string(l.n));
  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  std::vector<T> inv_std(l.c);
  const std::size_t m = l.n * l.spatial;
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0;
      for (std::size_t s = 0; s < l.n; ++s) {
        const T* p = input.raw() + (s * l.c + ch) * l.spatial;
        for (std::size_t i = 0; i < l.spatial; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0;
      for (std::size_t s = 0; s < l.n; ++s) {
        const T* p = input.raw() + (s * l.c + ch) * l.spatial;
        for (std::size_t i = 0; i < l.spatial; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      const double unbiased = sq / static_cast<double>(m - 1);
      state.running_mean[ch] =
          static_cast<T>(state.momentum * state.running_mean[ch] + (1 - state.momentum) * mean);
      state.running_var[ch] =
          static_cast<T>(state.momentum * state.running_var[ch] + (1 - state.momentum) * unbiased);
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
    inv_std[ch] = istd;
    const T mu = static_cast<T>(mean);
    for (std::size_t s = 0; s < l.n; ++s) {
      const std::size_t off = (s * l.c + ch) * l.spatial;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        const T xh = (input[off + i] - mu) * istd;
        xhat[off + i] = xh;
        out[off + i] = state.gamma[ch] * xh + state.beta[ch];
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache) {
  if (grad_out.shape() != cache.normalized.shape())
    throw ShapeError("batchnorm gradient " + to_string(grad_out.shape()) + " does not match cache " +
                     to_string(cache.normalized.shape()));
  const auto l = detail::channel_layout(grad_out, state.gamma.size());
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>(state.gamma.shape()),
                      Tensor<T>(state.beta.shape())};
  const double m = static_cast<double>(l.n * l.spatial);
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double sum_g = 0, sum_gx = 0;
    for (std::size_t s = 0; s < l.n; ++s) {
      const std::size_t off = (s * l.c + ch) * l.spatial;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += static_cast<double>(grad_out[off + i]) * cache.normalized[off + i];
      }
    }
    g.gamma[ch] = static_cast<T>(sum_gx);
    g.beta[ch] = static_cast<T>(sum_g);
    const double scale = static_cast<double>(state.gamma[ch]) * cache.inv_std[ch];
    for (std::size_t s = 0; s < l.n; ++s) {
      const std::size_t off = (s * l.c + ch) * l.spatial;
      for (std::size_t i = 0; i < l.spatial; ++i) {
        if (cache.mode == Mode::train)
          g.input[off + i] = static_cast<T>(
              scale * (grad_out[off + i] - sum_g / m - cache.normalized[off + i] * sum_gx / m));
        else
          g.input[off + i] = static_cast<T>(scale * grad_out[off + i]);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inverted dropout

template <class T>
struct DropoutMask {
  std::vector<T> scale;  // 0 or 1/(1-rate) per element; empty means identity
};

template <class T>
Tensor<T> dropout_apply(const Tensor<T>& input, const DropoutMask<T>& mask) {
  if (mask.scale.empty()) return input;
  if (mask.scale.size() != input.size())
    throw ShapeError("dropout mask length does not match input " + to_string(input.shape()));
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] * mask.scale[i];
  return out;
}

template <class T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng,
                  DropoutMask<T>* mask_out = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  DropoutMask<T> mask;
  if (mode == Mode::train && rate > 0.0) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    mask.scale.resize(input.size());
    for (auto& s : mask.scale) s = uniform01(rng) < rate ? T{0} : keep_scale;
  }
  Tensor<T> out = dropout_apply(input, mask);
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

template <class T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const DropoutMask<T>& mask) {
  return dropout_apply(grad_out, mask);
}

// ---------------------------------------------------------------------------
// Branch merge: concatenation of flattened branch outputs in declared order.

template <class T>
Tensor<T> merge(std::span<const Tensor<T>> branches) {
  if (branches.empty()) throw ShapeError("merge needs at least one branch");
  const std::size_t rank = branches.front().rank();
  if (rank != 1 && rank != 2)
    throw ShapeError("merge expects flattened branches, got " + to_string(branches.front().shape()));
  const std::size_t n = rank == 1 ? 1 : branches.front().dim(0);
  std::size_t width = 0;
  for (const auto& b : branches) {
    if (b.rank() != rank || (rank == 2 && b.dim(0) != n))
      throw ShapeError("merge expects flattened branches, got " + to_string(b.shape()));
    width += b.shape().back();
  }
  Tensor<T> out(rank == 1 ? Shape{width} : Shape{n, width});
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t off = 0;
    for (const auto& b : branches) {
      const std::size_t bw = b.shape().back();
      std::copy_n(b.raw() + s * bw, bw, out.raw() + s * width + off);
      off += bw;
    }
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> merge_backward(const Tensor<T>& grad_out, std::span<const std::size_t> widths) {
  const std::size_t width = grad_out.shape().back();
  const std::size_t n = grad_out.rank() == 1 ? 1 : grad_out.dim(0);
  std::size_t total = 0;
  for (auto w : widths) total += w;
  if (total != width)
    throw ShapeError("merge gradient width " + std::to_string(width) + " does not match branches");
  std::vector<Tensor<T>> out;
  std::size_t off = 0;
  for (auto w : widths) {
    Tensor<T> g(grad_out.rank() == 1 ? Shape{w} : Shape{n, w});
    for (std::size_t s = 0; s < n; ++s) std::copy_n(grad_out.raw() + s * width + off, w, g.raw() + s * w);
    off += w;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace gradenet
