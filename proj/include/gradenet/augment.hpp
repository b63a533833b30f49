#pragma once

#include <cmath>
#include <numbers>

#include "gradenet/error.hpp"
#include "gradenet/rng.hpp"
#include "gradenet/tensor.hpp"

namespace gradenet {

/// Real-time geometric augmentation. Applied as rotation, then shift, then
/// flips, identically to every channel of a stack; vacated pixels are zero.
struct AugmentPolicy {
  bool enabled = true;
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 10.0;
  double shift_fraction = 0.1;
  double hflip_probability = 0.5;
  double vflip_probability = 0.5;

  void validate() const {
    if (!(rotation_min_deg >= 0.0 && rotation_min_deg <= rotation_max_deg && rotation_max_deg <= 360.0))
      throw ConfigError("rotation range must satisfy 0 <= min <= max");
    if (!(shift_fraction >= 0.0 && shift_fraction < 1.0)) throw ConfigError("shift fraction must lie in [0, 1)");
    if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0) ||
        !(vflip_probability >= 0.0 && vflip_probability <= 1.0))
      throw ConfigError("flip probabilities must lie in [0, 1]");
  }
};

struct AugmentDraw {
  double angle_deg = 0.0;  // counter-clockwise about the image centre
  int shift_rows = 0;
  int shift_cols = 0;
  bool hflip = false;
  bool vflip = false;
};

inline AugmentDraw draw_augmentation(const AugmentPolicy& p, std::size_t height, std::size_t width, Rng& rng) {
  AugmentDraw d;
  d.angle_deg = p.rotation_min_deg == p.rotation_max_deg
                    ? p.rotation_min_deg
                    : std::uniform_real_distribution<double>(p.rotation_min_deg, p.rotation_max_deg)(rng);
  const int max_r = static_cast<int>(std::floor(p.shift_fraction * static_cast<double>(height)));
  const int max_c = static_cast<int>(std::floor(p.shift_fraction * static_cast<double>(width)));
  d.shift_rows = uniform_int(rng, -max_r, max_r);
  d.shift_cols = uniform_int(rng, -max_c, max_c);
  d.hflip = uniform01(rng) < p.hflip_probability;
  d.vflip = uniform01(rng) < p.vflip_probability;
  return d;
}

namespace detail {

inline void check_stack(const Tensor<float>& img) {
  if (img.rank() != 3) throw ShapeError("augmentation expects [C,H,W], got " + to_string(img.shape()));
}

}  // namespace detail

inline Tensor<float> rotate(const Tensor<float>& img, double angle_deg) {
  detail::check_stack(img);
  if (angle_deg == 0.0) return img;
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  Tensor<float> out(img.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // inverse map of the output pixel into the source image
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = cy + cs * dy + sn * dx;
      const double sx = cx - sn * dy + cs * dx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto px = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
          return img.at(ch, yy, xx);
        };
        const double v = (1 - ty) * ((1 - tx) * px(y0, x0) + tx * px(y0, x0 + 1)) +
                         ty * ((1 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1));
        out.at(ch, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

inline Tensor<float> shift(const Tensor<float>& img, int rows, int cols) {
  detail::check_stack(img);
  if (rows == 0 && cols == 0) return img;
  const long c = static_cast<long>(img.dim(0)), h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  Tensor<float> out(img.shape());
  for (long ch = 0; ch < c; ++ch)
    for (long y = 0; y < h; ++y) {
      const long sy = y - rows;
      if (sy < 0 || sy >= h) continue;
      for (long x = 0; x < w; ++x) {
        const long sx = x - cols;
        if (sx >= 0 && sx < w) out.at(ch, y, x) = img.at(ch, sy, sx);
      }
    }
  return out;
}

inline Tensor<float> flip_horizontal(const Tensor<float>& img) {
  detail::check_stack(img);
  Tensor<float> out(img.shape());
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, w - 1 - x);
  return out;
}

inline Tensor<float> flip_vertical(const Tensor<float>& img) {
  detail::check_stack(img);
  Tensor<float> out(img.shape());
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, h - 1 - y, x);
  return out;
}

inline Tensor<float> apply_augmentation(const Tensor<float>& img, const AugmentDraw& d) {
  Tensor<float> out = shift(rotate(img, d.angle_deg), d.shift_rows, d.shift_cols);
  if (d.hflip) out = flip_horizontal(out);
  if (d.vflip) out = flip_vertical(out);
  return out;
}

inline Tensor<float> augment_sample(const Tensor<float>& img, const AugmentPolicy& policy, Rng& rng) {
  detail::check_stack(img);
  if (!policy.enabled) return img;
  return apply_augmentation(img, draw_augmentation(policy, img.dim(1), img.dim(2), rng));
}

}  // namespace gradenet
