#pragma once

// Central finite-difference checks of every layer's backward pass, in double
// precision. The probe loss is L = sum(y * r) for a fixed random r, so the
// analytic gradient is backward(r).

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gradenet/layers.hpp"
#include "gradenet/training.hpp"

namespace gradenet {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kBatchNormGradTolerance = 1e-3;

/// |a - n| / max(|a|, |n|); 0 when both are exactly zero.
inline double relative_error(double analytic, double numeric) {
  const double den = std::max(std::abs(analytic), std::abs(numeric));
  return den == 0.0 ? 0.0 : std::abs(analytic - numeric) / den;
}

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = kGradTolerance;
  std::size_t checked = 0;  // gradient entries compared
  std::size_t seeds = 0;
  bool pass() const { return max_relative_error <= tolerance; }
};

namespace detail {

inline void fill_uniform(Tensor<double>& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
}

// Values spread away from zero and from each other, so relu kinks and
// max-pool ties stay farther than the step from any probe.
inline void fill_separated(Tensor<double>& t, Rng& rng) {
  std::vector<double> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.05 + 0.05 * static_cast<double>(i);
  std::shuffle(vals.begin(), vals.end(), rng);
  for (std::size_t i = 0; i < vals.size(); ++i) t[i] = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * vals[i];
}

inline double probe_loss(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace detail

/// Max relative error over the input gradient and every parameter gradient
/// of `layer` at input x. `forward_seed` re-seeds the layer RNG for every
/// evaluation, which pins dropout masks.
inline GradCheckResult check_layer(Layer<double>& layer, Tensor<double> x, Mode mode, std::uint64_t forward_seed,
                                   Rng& rng, double step = kGradCheckStep) {
  auto run = [&](const Tensor<double>& in) {
    Rng frng(forward_seed);
    return layer.forward(in, mode, frng);
  };
  const Tensor<double> y = run(x);
  Tensor<double> r(y.shape());
  detail::fill_uniform(r, rng, -1.0, 1.0);
  const Tensor<double> gx = layer.backward(r, true);
  std::vector<Tensor<double>> gp;
  for (auto* p : layer.parameters()) gp.push_back(p->grad);

  GradCheckResult res;
  res.name = to_string(layer.kind());
  res.tolerance = layer.kind() == LayerKind::batchnorm ? kBatchNormGradTolerance : kGradTolerance;
  res.seeds = 1;
  auto probe = [&](double& slot, double analytic, const Tensor<double>& in) {
    const double saved = slot;
    slot = saved + step;
    const double lp = detail::probe_loss(run(in), r);
    slot = saved - step;
    const double lm = detail::probe_loss(run(in), r);
    slot = saved;
    res.max_relative_error = std::max(res.max_relative_error, relative_error(analytic, (lp - lm) / (2 * step)));
    ++res.checked;
  };
  for (std::size_t i = 0; i < x.size(); ++i) probe(x[i], gx[i], x);
  const auto params = layer.parameters();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->value.size(); ++i) probe(params[k]->value[i], gp[k][i], x);
  return res;
}

/// Randomized check of one layer kind with the given seed.
inline GradCheckResult check_layer_kind(LayerKind kind, std::uint64_t seed) {
  Rng rng(seed);
  std::unique_ptr<Layer<double>> layer;
  Tensor<double> x;
  Mode mode = Mode::train;
  switch (kind) {
    case LayerKind::conv2d: {
      auto l = std::make_unique<Conv2dLayer<double>>(2, 3);
      detail::fill_uniform(l->kernels().value, rng, -1, 1);
      detail::fill_uniform(l->bias().value, rng, -1, 1);
      layer = std::move(l);
      x = Tensor<double>({1, 2, 4, 5});
      detail::fill_uniform(x, rng, -1, 1);
      break;
    }
    case LayerKind::dense: {
      auto l = std::make_unique<DenseLayer<double>>(5, 4);
      detail::fill_uniform(l->weights().value, rng, -1, 1);
      detail::fill_uniform(l->bias().value, rng, -1, 1);
      layer = std::move(l);
      x = Tensor<double>({2, 5});
      detail::fill_uniform(x, rng, -1, 1);
      break;
    }
    case LayerKind::batchnorm: {
      auto l = std::make_unique<BatchNormLayer<double>>(2);
      auto params = l->parameters();
      detail::fill_uniform(params[0]->value, rng, 0.5, 1.5);
      detail::fill_uniform(params[1]->value, rng, -1, 1);
      layer = std::move(l);
      x = Tensor<double>({4, 2, 3, 3});
      detail::fill_uniform(x, rng, -1, 1);
      break;
    }
    case LayerKind::relu:
    case LayerKind::sigmoid:
      layer = std::make_unique<ActivationLayer<double>>(kind == LayerKind::relu ? Activation::relu : Activation::sigmoid);
      x = Tensor<double>({3, 7});
      detail::fill_separated(x, rng);
      break;
    case LayerKind::maxpool:
      layer = std::make_unique<MaxPoolLayer<double>>();
      x = Tensor<double>({1, 2, 5, 4});
      detail::fill_separated(x, rng);
      break;
    case LayerKind::flatten:
      layer = std::make_unique<FlattenLayer<double>>();
      x = Tensor<double>({2, 2, 3, 3});
      detail::fill_uniform(x, rng, -1, 1);
      break;
    case LayerKind::dropout:
      layer = std::make_unique<DropoutLayer<double>>(0.5);
      x = Tensor<double>({2, 10});
      detail::fill_uniform(x, rng, -1, 1);
      break;
  }
  return check_layer(*layer, std::move(x), mode, derive_seed(seed, {7}), rng);
}

/// Gradient of the mean binary cross-entropy w.r.t. n predictions in (0.1, 0.9).
inline GradCheckResult check_bce(std::uint64_t seed, std::size_t n = 8, double step = kGradCheckStep) {
  Rng rng(seed);
  std::vector<double> f(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = 0.1 + 0.8 * uniform01(rng);
    y[i] = uniform01(rng) < 0.5 ? 0 : 1;
  }
  const auto analytic = bce_loss<double>(f, y);
  GradCheckResult res;
  res.name = "bce_loss";
  res.tolerance = 1e-6;
  res.seeds = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = f[i];
    f[i] = saved + step;
    const double lp = bce_loss<double>(f, y).loss;
    f[i] = saved - step;
    const double lm = bce_loss<double>(f, y).loss;
    f[i] = saved;
    res.max_relative_error = std::max(res.max_relative_error, relative_error(analytic.grad[i], (lp - lm) / (2 * step)));
    ++res.checked;
  }
  return res;
}

/// Every layer kind plus the loss, each over `seeds` random draws.
inline std::vector<GradCheckResult> run_gradcheck(std::size_t seeds = 20, std::uint64_t base_seed = 1) {
  const std::vector<LayerKind> kinds{LayerKind::conv2d,  LayerKind::dense,   LayerKind::batchnorm,
                                     LayerKind::relu,    LayerKind::sigmoid, LayerKind::dropout,
                                     LayerKind::maxpool, LayerKind::flatten};
  std::vector<GradCheckResult> out;
  auto merge = [&](std::function<GradCheckResult(std::uint64_t)> one) {
    GradCheckResult acc;
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto r = one(derive_seed(base_seed, {out.size(), s}));
      acc.name = r.name;
      acc.tolerance = r.tolerance;
      acc.checked += r.checked;
      acc.max_relative_error = std::max(acc.max_relative_error, r.max_relative_error);
      ++acc.seeds;
    }
    out.push_back(acc);
  };
  for (auto k : kinds) merge([k](std::uint64_t s) { return check_layer_kind(k, s); });
  merge([](std::uint64_t s) { return check_bce(s); });
  return out;
}

}  // namespace gradenet
