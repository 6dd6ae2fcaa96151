// Copyright 2026 The crbd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "crbd/codec/image_io.hpp"
#include "crbd/nn/zoo.hpp"
#include "crbd/trigger/trigger.hpp"
#include "crbd/trigger/trojan.hpp"
#include "support/fixtures.hpp"

namespace crbd {
namespace {

using trigger::TriggerPattern;

// Moments of clip(N(mu, sigma^2), 0, 1), by quadrature plus the point masses
// at the two bounds.
std::pair<double, double> clipped_normal_moments(double mu, double sigma) {
  const auto pdf = [&](double x) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  };
  const auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0))); };
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) / n;
    m1 += x * pdf(x) / n;
    m2 += x * x * pdf(x) / n;
  }
  const double upper = 1.0 - cdf(1.0);  // mass clipped to 1
  m1 += upper;
  m2 += upper;
  return {m1, std::sqrt(m2 - m1 * m1)};
}

std::pair<double, double> sample_moments(std::span<const float> v) {
  double s = 0.0, s2 = 0.0;
  for (float x : v) {
    s += x;
    s2 += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(v.size());
  const double mean = s / n;
  return {mean, std::sqrt(s2 / n - mean * mean)};
}

TEST(GaussianTrigger, ZeroStdIsConstantMidGray) {
  const ImageDims d{3, 16, 16};
  const auto t = trigger::make_gaussian_trigger(d, 0.0, 0.1, 7);
  const float mid = t.perturbation.pixels()[0];
  EXPECT_NEAR(mid, 0.5f, 1e-4f);
  for (float v : t.perturbation.pixels()) EXPECT_EQ(v, mid);
  for (float v : t.mask.pixels()) EXPECT_EQ(v, 1.0f);
  // Every pixel receives the same additive share of mid-gray.
  const Image x = testing::scene_image(d, 1);
  const Image out = trigger::stamp(x, t);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(out.pixels()[i] - 0.9f * x.pixels()[i], 0.1f * mid, 1e-6f);
}

TEST(GaussianTrigger, SameSeedGivesIdenticalPattern) {
  const auto a = trigger::make_gaussian_trigger({3, 32, 32}, 0.2, 0.1, 7);
  const auto b = trigger::make_gaussian_trigger({3, 32, 32}, 0.2, 0.1, 7);
  EXPECT_EQ(a.perturbation, b.perturbation);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.hash(), b.hash());
  const auto c = trigger::make_gaussian_trigger({3, 32, 32}, 0.2, 0.1, 8);
  EXPECT_NE(a.hash(), c.hash());
}

TEST(GaussianTrigger, MomentsMatchClippedNormal) {
  const auto t = trigger::make_gaussian_trigger({3, 64, 64}, 0.2, 0.1, 7);
  const auto [mean, sd] = sample_moments(t.perturbation.pixels());
  const auto [ref_mean, ref_sd] = clipped_normal_moments(0.5, 0.2);
  EXPECT_NEAR(ref_mean, 0.5, 1e-9);
  EXPECT_LT(ref_sd, 0.2);  // clipping shrinks the spread
  EXPECT_NEAR(mean, ref_mean, 0.01);
  EXPECT_NEAR(sd, ref_sd, 0.01);
}

TEST(GaussianTrigger, RejectsNegativeStd) {
  EXPECT_THROW(trigger::make_gaussian_trigger({3, 8, 8}, -0.1, 0.1, 7), ParameterError);
  EXPECT_THROW(trigger::make_gaussian_trigger({3, 8, 8}, 0.1, 1.5, 7), ParameterError);
}

TEST(GaussianTrigger, ValuesInUnitRange) {
  const auto t = trigger::make_gaussian_trigger({3, 32, 32}, 2.0, 0.3, 1);
  EXPECT_NO_THROW(t.validate());
}

TEST(Stamp, BlendZeroIsIdentity) {
  const ImageDims d{3, 32, 32};
  const auto t = trigger::make_gaussian_trigger(d, 0.3, 0.0, 7);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Image x = testing::scene_image(d, s);
    EXPECT_EQ(trigger::stamp(x, t), x);
  }
}

TEST(Stamp, FullMaskFullBlendReplaces) {
  const ImageDims d{3, 8, 8};
  auto t = trigger::make_gaussian_trigger(d, 0.3, 1.0, 7);
  const Image x = testing::scene_image(d, 4);
  EXPECT_EQ(trigger::stamp(x, t), t.perturbation);
}

TEST(Stamp, AnalyticHalfBlend) {
  const ImageDims d{3, 4, 4};
  TriggerPattern t;
  t.perturbation = Image(d, 1.0f);
  t.mask = Image(d, 1.0f);
  t.blend = 0.5f;
  const Image out = trigger::stamp(Image(d, 0.0f), t);
  for (float v : out.pixels()) EXPECT_EQ(v, 0.5f);
}

TEST(Stamp, ShapeMismatchIsParameterError) {
  const auto t = trigger::make_gaussian_trigger({3, 8, 8}, 0.3, 0.1, 7);
  EXPECT_THROW(trigger::stamp(Image({3, 16, 16}), t), ParameterError);
}

TEST(Stamp, OutputStaysInRangeAndOpaqueIsIdempotent) {
  const ImageDims d{3, 32, 32};
  const auto t = trigger::make_gaussian_trigger(d, 1.0, 1.0, 9);
  const Image x = testing::scene_image(d, 5);
  const Image once = trigger::stamp(x, t);
  for (float v : once.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(trigger::stamp(once, t), once);
}

class LogoTrigger : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::scratch_dir("logo");
    // 4x4 fully opaque asset with distinct colors per pixel.
    Image a({3, 4, 4});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) a.at(c, y, x) = from_u8(static_cast<std::uint8_t>(40 * c + 10 * y + 2 * x + 5));
    asset_ = a;
    codec::write_png(dir_ / "asset.png", a);
  }
  std::filesystem::path dir_;
  Image asset_;
};

TEST_F(LogoTrigger, EightByEightFootprintHasMaskSum64) {
  const auto t = trigger::make_logo_trigger(dir_ / "asset.png", {1, 32, 32}, {0, 0}, 2.0, 1.0);
  double sum = 0.0;
  for (float v : t.mask.pixels()) sum += v;
  EXPECT_EQ(sum, 64.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(t.mask.at(0, y, x), (x < 8 && y < 8) ? 1.0f : 0.0f);
}

TEST_F(LogoTrigger, OpaquePasteOnBlackShowsAssetAtPosition) {
  const ImageDims d{3, 32, 32};
  const auto t = trigger::make_logo_trigger(dir_ / "asset.png", d, {10, 20}, 1.0, 1.0);
  const Image out = trigger::stamp(Image(d, 0.0f), t);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool inside = x >= 10 && x < 14 && y >= 20 && y < 24;
        EXPECT_EQ(out.at(c, y, x), inside ? asset_.at(c, y - 20, x - 10) : 0.0f);
      }
}

TEST_F(LogoTrigger, BlendZeroIsIdentity) {
  const ImageDims d{3, 32, 32};
  const auto t = trigger::make_logo_trigger(dir_ / "asset.png", d, {3, 3}, 1.5, 0.0);
  const Image x = testing::scene_image(d, 8);
  EXPECT_EQ(trigger::stamp(x, t), x);
}

TEST_F(LogoTrigger, AlphaDefinesFootprint) {
  trigger::LogoAsset a;
  a.color = Image({3, 2, 2}, 1.0f);
  a.alpha = Image({1, 2, 2}, 0.0f);
  a.alpha->at(0, 0, 0) = 1.0f;
  a.alpha->at(0, 1, 1) = 0.6f;
  const auto t = trigger::make_logo_trigger(a, {1, 8, 8}, {2, 2}, 1.0, 1.0);
  double sum = 0.0;
  for (float v : t.mask.pixels()) sum += v;
  EXPECT_EQ(sum, 2.0);
  EXPECT_EQ(t.mask.at(0, 2, 2), 1.0f);
  EXPECT_EQ(t.mask.at(0, 3, 3), 1.0f);
}

TEST_F(LogoTrigger, OutOfBoundsIsPlacementError) {
  EXPECT_THROW(trigger::make_logo_trigger(dir_ / "asset.png", {3, 32, 32}, {30, 0}, 1.0, 1.0), PlacementError);
  EXPECT_THROW(trigger::make_logo_trigger(dir_ / "asset.png", {3, 32, 32}, {0, 0}, 9.0, 1.0), PlacementError);
}

TEST_F(LogoTrigger, UnreadableAssetIsIoError) {
  EXPECT_THROW(trigger::make_logo_trigger(dir_ / "missing.png", {3, 32, 32}, {0, 0}, 1.0, 1.0), IoError);
}

TEST(TextLogo, RenderedTextFitsAtBottomRight) {
  const auto logo = trigger::render_text_logo("TEST", 8);
  ASSERT_TRUE(logo.alpha.has_value());
  const ImageDims d{3, 32, 32};
  const auto t = trigger::make_logo_trigger(logo, d, {d.width - logo.color.width() - 1, d.height - logo.color.height() - 1},
                                            1.0, 1.0);
  double sum = 0.0;
  for (float v : t.mask.pixels()) sum += v;
  EXPECT_GT(sum, 0.0);
}

TEST(TriggerPersistence, SaveLoadRoundTrips) {
  const auto dir = testing::scratch_dir("trigger-io");
  const auto t = trigger::make_gaussian_trigger({3, 32, 32}, 0.4, 0.2, 11);
  trigger::save_trigger(t, dir);
  const auto back = trigger::load_trigger(dir);
  EXPECT_EQ(back.hash(), t.hash());
  EXPECT_EQ(back.kind, t.kind);
  EXPECT_EQ(back.seed, t.seed);
  EXPECT_EQ(back.blend, t.blend);
}

class TrojanTrigger : public ::testing::Test {
 protected:
  nn::Model<float> model_ = nn::build_model<float>("smallcnn", 10, 3);
  trigger::TrojanForgeConfig cfg_{"fc1", {0, 1}, {20, 20, 8, 8}, 40, 0.05, 10.0};
};

TEST_F(TrojanTrigger, ZeroStepsRejected) {
  auto cfg = cfg_;
  cfg.steps = 0;
  EXPECT_THROW(trigger::make_trojan_trigger(model_, cfg), ParameterError);
}

TEST_F(TrojanTrigger, RegionOutsideImageRejected) {
  auto cfg = cfg_;
  cfg.region = {28, 28, 8, 8};
  EXPECT_THROW(trigger::make_trojan_trigger(model_, cfg), ParameterError);
}

TEST_F(TrojanTrigger, BadSelectorIsConfigError) {
  auto cfg = cfg_;
  cfg.layer = "nope";
  EXPECT_THROW(trigger::make_trojan_trigger(model_, cfg), ConfigError);
  cfg = cfg_;
  cfg.neurons = {128};
  EXPECT_THROW(trigger::make_trojan_trigger(model_, cfg), ConfigError);
}

TEST_F(TrojanTrigger, RaisesTargetActivationAndStaysInMask) {
  const std::string before_sum = model_.checksum();
  const Image canvas({3, 32, 32}, 0.5f);
  const double before = trigger::mean_neuron_activation(model_, canvas, cfg_.layer, cfg_.neurons);
  const auto t = trigger::make_trojan_trigger(model_, cfg_);
  const double after = trigger::mean_neuron_activation(model_, trigger::stamp(canvas, t), cfg_.layer, cfg_.neurons);
  EXPECT_GE(after, before);
  EXPECT_GT(after, before + 1e-3);
  EXPECT_EQ(t.blend, 1.0f);
  EXPECT_EQ(model_.checksum(), before_sum);  // parameters untouched
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool inside = x >= 20 && x < 28 && y >= 20 && y < 28;
        EXPECT_EQ(t.mask.at(c, y, x), inside ? 1.0f : 0.0f);
        if (!inside) EXPECT_EQ(t.perturbation.at(c, y, x), 0.0f);
      }
}

TEST_F(TrojanTrigger, Deterministic) {
  const auto a = trigger::make_trojan_trigger(model_, cfg_);
  const auto b = trigger::make_trojan_trigger(model_, cfg_);
  EXPECT_EQ(a.hash(), b.hash());
}

}  // namespace
}  // namespace crbd
