#include <gtest/gtest.h>

#include <cmath>

#include "gradenet/gradenet.hpp"

using namespace gradenet;

namespace {

Tensor<float> ramp(std::size_t c, std::size_t h, std::size_t w) {
  Tensor<float> t({c, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i % 97) + 1.0f;
  return t;
}

}  // namespace

TEST(Augment, DisabledPolicyIsIdentity) {
  AugmentPolicy p;
  p.enabled = false;
  const auto img = ramp(2, 9, 11);
  Rng rng(5), untouched(5);
  EXPECT_EQ(augment_sample(img, p, rng), img);
  EXPECT_EQ(rng(), untouched());
}

TEST(Augment, ZeroDrawIsIdentity) {
  const auto img = ramp(3, 8, 8);
  EXPECT_EQ(apply_augmentation(img, AugmentDraw{}), img);
}

TEST(Augment, FlipsAreInvolutions) {
  const auto img = ramp(2, 5, 7);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
  const auto h = flip_horizontal(img);
  const auto v = flip_vertical(img);
  EXPECT_EQ(h.at(1, 2, 0), img.at(1, 2, 6));
  EXPECT_EQ(v.at(1, 0, 3), img.at(1, 4, 3));
}

TEST(Augment, ShiftMovesContentAndZeroFills) {
  const auto img = ramp(1, 6, 6);
  const auto s = shift(img, 2, -1);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const long sy = static_cast<long>(y) - 2, sx = static_cast<long>(x) + 1;
      const float expected = sy >= 0 && sx < 6 ? img.at(0, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) : 0.0f;
      EXPECT_EQ(s.at(0, y, x), expected);
    }
}

TEST(Augment, RotateQuarterTurnIsExactPermutation) {
  const auto img = ramp(2, 5, 5);
  const auto r = rotate(img, 90.0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) EXPECT_NEAR(r.at(c, y, x), img.at(c, x, 4 - y), 1e-4);
}

TEST(Augment, RotateKeepsCentreAndFullTurn) {
  const auto img = ramp(1, 9, 9);
  EXPECT_NEAR(rotate(img, 7.5).at(0, 4, 4), img.at(0, 4, 4), 1e-4);
  const auto full = rotate(img, 360.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(full[i], img[i], 1e-3);
  EXPECT_EQ(rotate(img, 0.0), img);
}

TEST(Augment, CompositionOrder) {
  const auto img = ramp(2, 10, 12);
  AugmentDraw d{6.0, 1, -2, true, true};
  const auto expected = flip_vertical(flip_horizontal(shift(rotate(img, 6.0), 1, -2)));
  EXPECT_EQ(apply_augmentation(img, d), expected);
}

TEST(Augment, ChannelsTransformedIdentically) {
  Tensor<float> img({2, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) img.at(0, y, x) = img.at(1, y, x) = static_cast<float>(y * 16 + x);
  Rng rng(9);
  const auto out = augment_sample(img, AugmentPolicy{}, rng);
  for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(out[i], out[256 + i]);
}

TEST(Augment, DrawsStayInRange) {
  const AugmentPolicy p;
  Rng rng(11);
  std::size_t h = 0, v = 0;
  double lo = 1e9, hi = -1e9;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto d = draw_augmentation(p, 32, 25, rng);
    lo = std::min(lo, d.angle_deg);
    hi = std::max(hi, d.angle_deg);
    ASSERT_GE(d.angle_deg, 0.0);
    ASSERT_LE(d.angle_deg, 10.0);
    ASSERT_LE(std::abs(d.shift_rows), 3);
    ASSERT_LE(std::abs(d.shift_cols), 2);
    h += d.hflip;
    v += d.vflip;
  }
  EXPECT_LT(lo, 0.01);
  EXPECT_GT(hi, 9.99);
  EXPECT_NEAR(static_cast<double>(h) / n, 0.5, 0.03);
  EXPECT_NEAR(static_cast<double>(v) / n, 0.5, 0.03);
}

TEST(Augment, FixedRotationAndNoFlips) {
  AugmentPolicy p;
  p.rotation_min_deg = p.rotation_max_deg = 4.0;
  p.hflip_probability = p.vflip_probability = 0.0;
  p.shift_fraction = 0.0;
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto d = draw_augmentation(p, 200, 200, rng);
    EXPECT_EQ(d.angle_deg, 4.0);
    EXPECT_EQ(d.shift_rows, 0);
    EXPECT_FALSE(d.hflip || d.vflip);
  }
}

TEST(Augment, ShapesPreservedValuesFiniteDeterministic) {
  const auto img = ramp(4, 32, 32);
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng a(s), b(s);
    const auto x = augment_sample(img, AugmentPolicy{}, a);
    const auto y = augment_sample(img, AugmentPolicy{}, b);
    ASSERT_EQ(x.shape(), img.shape());
    EXPECT_EQ(x, y);
    for (float v : x.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Augment, PolicyValidation) {
  AugmentPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.rotation_min_deg = 12.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.shift_fraction = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.hflip_probability = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  Rng rng(1);
  EXPECT_THROW(augment_sample(Tensor<float>({4, 4}), p, rng), ShapeError);
}
