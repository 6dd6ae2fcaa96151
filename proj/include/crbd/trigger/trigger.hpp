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

/// \file
/// Backdoor trigger patterns and the stamping transform that applies them.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

#include "crbd/codec/image_io.hpp"
#include "crbd/core/error.hpp"
#include "crbd/core/hash.hpp"
#include "crbd/core/image.hpp"
#include "crbd/core/rng.hpp"

namespace crbd::trigger {

enum class TriggerKind { gaussian, logo, trojan, fixed_asset };

inline std::string trigger_kind_name(TriggerKind k) {
  switch (k) {
    case TriggerKind::gaussian: return "gaussian";
    case TriggerKind::logo: return "logo";
    case TriggerKind::trojan: return "trojan";
    case TriggerKind::fixed_asset: return "fixed-asset";
  }
  return "?";
}

inline TriggerKind parse_trigger_kind(const std::string& s) {
  if (s == "gaussian") return TriggerKind::gaussian;
  if (s == "logo") return TriggerKind::logo;
  if (s == "trojan") return TriggerKind::trojan;
  if (s == "fixed-asset" || s == "fixed_asset") return TriggerKind::fixed_asset;
  throw ConfigError("unknown trigger kind '" + s + "'");
}

/// A stamping transform: out = (1 - blend*mask) * x + blend*mask*perturbation.
///
/// `perturbation` and `mask` share the image dimensions and hold values in
/// [0,1]. Generated patterns sit on the 16-bit grid so the PNG persistence
/// format round-trips them exactly.
struct TriggerPattern {
  TriggerKind kind = TriggerKind::gaussian;
  Image perturbation;
  Image mask;
  float blend = 0.1f;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  [[nodiscard]] const ImageDims& dims() const { return perturbation.dims(); }

  [[nodiscard]] std::string hash() const {
    Fnv1a h;
    h.update(trigger_kind_name(kind));
    const auto blend_bits = std::bit_cast<std::uint32_t>(blend);
    h.update_values(std::span<const std::uint32_t>(&blend_bits, 1));
    h.update_values(perturbation.pixels());
    h.update_values(mask.pixels());
    return h.hex();
  }

  void validate() const {
    if (perturbation.dims() != mask.dims())
      throw ParameterError("trigger perturbation " + to_string(perturbation.dims()) + " and mask " +
                           to_string(mask.dims()) + " differ in shape");
    if (!(blend >= 0.0f && blend <= 1.0f)) throw ParameterError("trigger blend must be in [0,1]");
    for (float v : perturbation.pixels())
      if (!(v >= 0.0f && v <= 1.0f)) throw ParameterError("trigger perturbation outside [0,1]");
    for (float v : mask.pixels())
      if (!(v >= 0.0f && v <= 1.0f)) throw ParameterError("trigger mask outside [0,1]");
  }
};

inline void check_blend(double blend) {
  if (!(blend >= 0.0 && blend <= 1.0))
    throw ParameterError("blend must be in [0,1], got " + std::to_string(blend));
}

/// Applies the trigger. Pure; output is clipped to [0,1].
inline Image stamp(const Image& x, const TriggerPattern& t) {
  if (x.dims() != t.dims())
    throw ParameterError("stamp: image " + to_string(x.dims()) + " does not match trigger " +
                         to_string(t.dims()));
  Image out(x.dims());
  const auto px = x.pixels();
  const auto pp = t.perturbation.pixels();
  const auto pm = t.mask.pixels();
  auto po = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const float w = t.blend * pm[i];
    const float keep = 1.0f - w;
    const float a = keep * px[i];
    const float b = w * pp[i];
    po[i] = std::clamp(a + b, 0.0f, 1.0f);
  }
  return out;
}

/// Full-image clipped Gaussian noise around mid-gray.
inline TriggerPattern make_gaussian_trigger(const ImageDims& dims, double stddev, double blend,
                                            std::uint64_t seed) {
  if (!dims.valid()) throw ParameterError("gaussian trigger: invalid dims " + to_string(dims));
  if (!(stddev >= 0.0)) throw ParameterError("gaussian trigger: std must be >= 0");
  check_blend(blend);
  TriggerPattern t;
  t.kind = TriggerKind::gaussian;
  t.perturbation = Image(dims);
  t.mask = Image(dims, 1.0f);
  t.blend = static_cast<float>(blend);
  t.seed = seed;
  t.params = {{"std", stddev}};
  Rng rng(seed);
  for (auto& v : t.perturbation.pixels())
    v = from_u16(to_u16(static_cast<float>(std::clamp(rng.normal(0.5, stddev), 0.0, 1.0))));
  return t;
}

/// An RGB asset with an optional alpha channel.
struct LogoAsset {
  Image color;
  std::optional<Image> alpha;
};

inline LogoAsset read_logo_asset(const std::filesystem::path& path) {
  LogoAsset a;
  a.color = codec::read_image(path, &a.alpha);
  return a;
}

/// Renders text (white on transparent) with OpenCV's Hershey simplex font.
inline LogoAsset render_text_logo(const std::string& text, int height_px = 8) {
  if (height_px < 4) throw ParameterError("text logo height must be >= 4 px");
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  const int thickness = 1;
  int baseline = 0;
  const double scale = cv::getFontScaleFromHeight(font, height_px, thickness);
  const cv::Size size = cv::getTextSize(text, font, scale, thickness, &baseline);
  cv::Mat canvas = cv::Mat::zeros(size.height + baseline, size.width, CV_8UC1);
  cv::putText(canvas, text, cv::Point(0, size.height), font, scale, cv::Scalar(255), thickness, cv::LINE_8);
  LogoAsset a;
  a.color = Image(ImageDims{3, canvas.rows, canvas.cols}, 1.0f);
  a.alpha = codec::from_mat(canvas);
  return a;
}

/// Nearest-neighbour rescale; kept here so the footprint does not depend on
/// an interpolation library.
inline Image resize_nearest(const Image& src, int height, int width) {
  Image out(ImageDims{src.channels(), height, width});
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < height; ++y) {
      const int sy = std::min(src.height() - 1, static_cast<int>((static_cast<long long>(y) * src.height()) / height));
      for (int x = 0; x < width; ++x) {
        const int sx = std::min(src.width() - 1, static_cast<int>((static_cast<long long>(x) * src.width()) / width));
        out.at(c, y, x) = src.at(c, sy, sx);
      }
    }
  return out;
}

struct PixelOffset {
  int x = 0;
  int y = 0;
};

/// Pastes a scaled asset at `position`. The mask is 1 exactly on the asset's
/// opaque footprint (alpha >= 0.5, or the whole asset when it has no alpha).
inline TriggerPattern make_logo_trigger(const LogoAsset& asset, const ImageDims& dims, PixelOffset position,
                                        double scale, double blend) {
  if (!(scale > 0.0)) throw ParameterError("logo trigger: scale must be > 0");
  check_blend(blend);
  if (asset.color.empty()) throw ParameterError("logo trigger: empty asset");
  const int sh = std::max(1, static_cast<int>(std::lround(asset.color.height() * scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(asset.color.width() * scale)));
  if (position.x < 0 || position.y < 0 || position.x + sw > dims.width || position.y + sh > dims.height)
    throw PlacementError("logo of " + std::to_string(sw) + "x" + std::to_string(sh) + " at (" +
                         std::to_string(position.x) + "," + std::to_string(position.y) +
                         ") does not fit in " + to_string(dims));
  const Image color = resize_nearest(asset.color, sh, sw);
  std::optional<Image> alpha;
  if (asset.alpha) alpha = resize_nearest(*asset.alpha, sh, sw);

  TriggerPattern t;
  t.kind = TriggerKind::logo;
  t.perturbation = Image(dims);
  t.mask = Image(dims);
  t.blend = static_cast<float>(blend);
  t.params = {{"x", position.x}, {"y", position.y}, {"scale", scale}, {"footprint", {sw, sh}}};
  for (int y = 0; y < sh; ++y)
    for (int x = 0; x < sw; ++x) {
      if (alpha && alpha->at(0, y, x) < 0.5f) continue;
      for (int c = 0; c < dims.channels; ++c) {
        const int src_c = color.channels() == 1 ? 0 : std::min(c, color.channels() - 1);
        t.perturbation.at(c, position.y + y, position.x + x) = from_u16(to_u16(color.at(src_c, y, x)));
        t.mask.at(c, position.y + y, position.x + x) = 1.0f;
      }
    }
  return t;
}

inline TriggerPattern make_logo_trigger(const std::filesystem::path& asset, const ImageDims& dims,
                                        PixelOffset position, double scale, double blend) {
  auto t = make_logo_trigger(read_logo_asset(asset), dims, position, scale, blend);
  t.params["asset"] = asset.filename().string();
  return t;
}

/// Wraps an externally produced trigger image. Without a mask file the asset's
/// alpha (if any) becomes the mask, otherwise the mask covers the whole image.
inline TriggerPattern load_fixed_asset_trigger(const std::filesystem::path& perturbation_png,
                                               const std::optional<std::filesystem::path>& mask_png,
                                               double blend) {
  check_blend(blend);
  std::optional<Image> alpha;
  TriggerPattern t;
  t.kind = TriggerKind::fixed_asset;
  t.perturbation = codec::read_image(perturbation_png, &alpha);
  if (mask_png) {
    t.mask = codec::read_image(*mask_png);
    if (t.mask.channels() == 1 && t.perturbation.channels() != 1) {
      Image m(t.perturbation.dims());
      for (int c = 0; c < m.channels(); ++c)
        for (int y = 0; y < m.height(); ++y)
          for (int x = 0; x < m.width(); ++x) m.at(c, y, x) = t.mask.at(0, y, x);
      t.mask = std::move(m);
    }
  } else if (alpha) {
    Image m(t.perturbation.dims());
    for (int c = 0; c < m.channels(); ++c)
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) m.at(c, y, x) = alpha->at(0, y, x);
    t.mask = std::move(m);
  } else {
    t.mask = Image(t.perturbation.dims(), 1.0f);
  }
  t.blend = static_cast<float>(blend);
  t.params = {{"asset", perturbation_png.filename().string()}};
  t.validate();
  return t;
}

/// Writes `<stem>_perturbation.png`, `<stem>_mask.png` (16-bit) and `<stem>.json`.
inline void save_trigger(const TriggerPattern& t, const std::filesystem::path& dir, const std::string& stem = "trigger") {
  std::filesystem::create_directories(dir);
  codec::write_png(dir / (stem + "_perturbation.png"), t.perturbation, true);
  codec::write_png(dir / (stem + "_mask.png"), t.mask, true);
  nlohmann::json j = {{"kind", trigger_kind_name(t.kind)},
                      {"blend", t.blend},
                      {"seed", t.seed},
                      {"dims", {t.dims().channels, t.dims().height, t.dims().width}},
                      {"params", t.params},
                      {"hash", t.hash()}};
  std::ofstream out(dir / (stem + ".json"));
  if (!out) throw IoError("cannot write trigger sidecar in " + dir.string());
  out << j.dump(2) << "\n";
}

inline TriggerPattern load_trigger(const std::filesystem::path& dir, const std::string& stem = "trigger") {
  std::ifstream in(dir / (stem + ".json"));
  if (!in) throw IoError("cannot read trigger sidecar " + (dir / (stem + ".json")).string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed trigger sidecar: ") + e.what());
  }
  TriggerPattern t;
  t.kind = parse_trigger_kind(j.at("kind").get<std::string>());
  t.blend = j.at("blend").get<float>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.params = j.value("params", nlohmann::json::object());
  t.perturbation = codec::read_image(dir / (stem + "_perturbation.png"));
  t.mask = codec::read_image(dir / (stem + "_mask.png"));
  t.validate();
  return t;
}

}  // namespace crbd::trigger
