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
/// In-memory lossy round trips (JPEG, JPEG2000, WEBP) and image-quality measurement.

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/core/utility.hpp>
#include <opencv2/imgcodecs.hpp>

#include "crbd/codec/image_io.hpp"
#include "crbd/core/error.hpp"
#include "crbd/core/image.hpp"

namespace crbd::codec {

enum class Codec { none, jpeg, jpeg2000, webp };

inline std::string codec_name(Codec c) {
  switch (c) {
    case Codec::none: return "none";
    case Codec::jpeg: return "jpeg";
    case Codec::jpeg2000: return "jpeg2000";
    case Codec::webp: return "webp";
  }
  return "?";
}

inline Codec parse_codec(const std::string& s) {
  if (s == "none") return Codec::none;
  if (s == "jpeg" || s == "jpg") return Codec::jpeg;
  if (s == "jpeg2000" || s == "jp2") return Codec::jpeg2000;
  if (s == "webp") return Codec::webp;
  throw ParameterError("unsupported codec '" + s + "'");
}

inline constexpr int kDefaultJpegQuality = 50;
inline constexpr int kDefaultWebpQuality = 50;
inline constexpr int kDefaultJpeg2000Layers = 30;
/// The JPEG2000 backend uses a fixed 6-level wavelet decomposition, so both
/// image sides must be at least 2^5 pixels.
inline constexpr int kJpeg2000MinSide = 32;

/// Codec identity plus its single quality knob.
///
/// jpeg/webp carry `quality` in [0,100] (higher is better); jpeg2000 carries
/// `quality_layers` >= 1, used as the target compression ratio (higher is worse).
class CompressionSpec {
 public:
  CompressionSpec() = default;

  static CompressionSpec none() { return CompressionSpec(Codec::none, std::nullopt, std::nullopt); }
  static CompressionSpec jpeg(int quality = kDefaultJpegQuality) {
    check_quality(quality, "jpeg");
    return CompressionSpec(Codec::jpeg, quality, std::nullopt);
  }
  static CompressionSpec webp(int quality = kDefaultWebpQuality) {
    check_quality(quality, "webp");
    return CompressionSpec(Codec::webp, quality, std::nullopt);
  }
  static CompressionSpec jpeg2000(int quality_layers = kDefaultJpeg2000Layers) {
    if (quality_layers < 1)
      throw ParameterError("jpeg2000 quality_layers must be >= 1, got " + std::to_string(quality_layers));
    return CompressionSpec(Codec::jpeg2000, std::nullopt, quality_layers);
  }
  /// Spec at the codec's default knob value.
  static CompressionSpec defaults(Codec c) {
    switch (c) {
      case Codec::none: return none();
      case Codec::jpeg: return jpeg();
      case Codec::jpeg2000: return jpeg2000();
      case Codec::webp: return webp();
    }
    throw ParameterError("unsupported codec");
  }
  /// Builds a spec from a codec and a single knob value (quality or layers).
  static CompressionSpec with_level(Codec c, int level) {
    switch (c) {
      case Codec::none: return none();
      case Codec::jpeg: return jpeg(level);
      case Codec::jpeg2000: return jpeg2000(level);
      case Codec::webp: return webp(level);
    }
    throw ParameterError("unsupported codec");
  }

  /// Parses tags such as "jpeg", "jpeg-q30", "webp-q50", "jpeg2000-l30", "none".
  static CompressionSpec parse(const std::string& tag) {
    const auto dash = tag.find('-');
    const Codec c = parse_codec(tag.substr(0, dash));
    if (dash == std::string::npos) return defaults(c);
    const std::string rest = tag.substr(dash + 1);
    if (rest.size() < 2) throw ParameterError("malformed compression tag '" + tag + "'");
    const char kind = rest[0];
    int level = 0;
    try {
      std::size_t used = 0;
      level = std::stoi(rest.substr(1), &used);
      if (used != rest.size() - 1) throw ParameterError("");
    } catch (const std::exception&) {
      throw ParameterError("malformed compression tag '" + tag + "'");
    }
    if ((c == Codec::jpeg || c == Codec::webp) && kind != 'q')
      throw ParameterError("'" + tag + "': jpeg/webp take a quality (-qN)");
    if (c == Codec::jpeg2000 && kind != 'l')
      throw ParameterError("'" + tag + "': jpeg2000 takes quality layers (-lN)");
    if (c == Codec::none) throw ParameterError("'none' takes no parameters");
    return with_level(c, level);
  }

  [[nodiscard]] Codec codec() const { return codec_; }
  [[nodiscard]] std::optional<int> quality() const { return quality_; }
  [[nodiscard]] std::optional<int> quality_layers() const { return layers_; }
  /// The knob value regardless of which field carries it (0 for `none`).
  [[nodiscard]] int level() const { return quality_.value_or(layers_.value_or(0)); }

  [[nodiscard]] std::string tag() const {
    switch (codec_) {
      case Codec::none: return "none";
      case Codec::jpeg2000: return "jpeg2000-l" + std::to_string(*layers_);
      default: return codec_name(codec_) + "-q" + std::to_string(*quality_);
    }
  }

  friend auto operator<=>(const CompressionSpec&, const CompressionSpec&) = default;
  friend bool operator==(const CompressionSpec&, const CompressionSpec&) = default;

 private:
  CompressionSpec(Codec c, std::optional<int> q, std::optional<int> l) : codec_(c), quality_(q), layers_(l) {}

  static void check_quality(int q, const char* name) {
    if (q < 0 || q > 100)
      throw ParameterError(std::string(name) + " quality must be in [0,100], got " + std::to_string(q));
  }

  Codec codec_ = Codec::none;
  std::optional<int> quality_;
  std::optional<int> layers_;
};

namespace detail {

inline std::string build_info_line(const std::string& key) {
  std::istringstream in(cv::getBuildInformation());
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find(key);
    if (pos == std::string::npos) continue;
    auto value = line.substr(pos + key.size());
    value.erase(0, value.find_first_not_of(" \t"));
    return value;
  }
  return "unknown";
}

/// OpenCV encoder options for a spec. Only the quality knob is set; every
/// other encoder option stays at the library default.
inline std::pair<std::string, std::vector<int>> encoder_params(const CompressionSpec& spec) {
  switch (spec.codec()) {
    case Codec::jpeg:
      return {".jpg", {cv::IMWRITE_JPEG_QUALITY, *spec.quality()}};
    case Codec::webp:
      // libwebp via OpenCV treats quality < 1 as 1 and > 100 as lossless.
      return {".webp", {cv::IMWRITE_WEBP_QUALITY, std::max(1, *spec.quality())}};
    case Codec::jpeg2000: {
      // One quality layer whose compression ratio is the configured value.
      // OpenCV exposes the ratio as 1000 / X1000 with integer X1000.
      const int x1000 = std::clamp(
          static_cast<int>(std::lround(1000.0 / static_cast<double>(*spec.quality_layers()))), 1, 1000);
      return {".jp2", {cv::IMWRITE_JPEG2000_COMPRESSION_X1000, x1000}};
    }
    case Codec::none:
      return {".png", {cv::IMWRITE_PNG_COMPRESSION, 3}};
  }
  throw ParameterError("unsupported codec");
}

}  // namespace detail

/// Library versions that decide decoded pixels; stored in every results artifact.
inline const std::map<std::string, std::string>& codec_versions() {
  static const std::map<std::string, std::string> versions = [] {
    std::map<std::string, std::string> v;
    v["opencv"] = CV_VERSION;
    v["jpeg"] = detail::build_info_line("JPEG:");
    v["webp"] = detail::build_info_line("WEBP:");
    v["jpeg2000"] = detail::build_info_line("JPEG 2000:");
    v["png"] = detail::build_info_line("PNG:");
    return v;
  }();
  return versions;
}

/// Encodes an image to the codec's byte stream.
inline std::vector<std::uint8_t> encode(const Image& x, const CompressionSpec& spec) {
  if (spec.codec() == Codec::jpeg2000 && (x.dims().width < kJpeg2000MinSide || x.dims().height < kJpeg2000MinSide))
    throw ParameterError(spec.tag() + ": images must be at least " + std::to_string(kJpeg2000MinSide) + "x" +
                         std::to_string(kJpeg2000MinSide) + " for JPEG2000, got " + to_string(x.dims()));
  const auto [ext, params] = detail::encoder_params(spec);
  std::vector<std::uint8_t> bytes;
  bool ok = false;
  try {
    ok = cv::imencode(ext, to_mat_u8(x), bytes, params);
  } catch (const cv::Exception& e) {
    throw CodecError(spec.tag() + ": encode failed for " + to_string(x.dims()) + ": " + e.what());
  }
  if (!ok || bytes.empty())
    throw CodecError(spec.tag() + ": encode failed for " + to_string(x.dims()));
  return bytes;
}

inline Image decode(const std::vector<std::uint8_t>& bytes, const CompressionSpec& spec, const ImageDims& expect) {
  cv::Mat m;
  try {
    m = cv::imdecode(bytes, expect.channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw CodecError(spec.tag() + ": decode failed: " + e.what());
  }
  if (m.empty()) throw CodecError(spec.tag() + ": decode produced no image");
  Image out = from_mat(m);
  if (out.dims() != expect)
    throw CodecError(spec.tag() + ": decoded dims " + to_string(out.dims()) + " differ from " + to_string(expect));
  return out;
}

/// Lossy encode/decode round trip. `none` is the 8-bit quantization round trip.
inline Image compress(const Image& x, const CompressionSpec& spec) {
  if (x.empty() || !x.dims().valid()) throw ParameterError("compress: empty image");
  if (x.channels() != 1 && x.channels() != 3)
    throw ParameterError("compress: codecs accept 1 or 3 channels, got " + std::to_string(x.channels()));
  if (spec.codec() == Codec::none) return quantize_u8(x);
  return decode(encode(x, spec), spec, x.dims());
}

/// Peak signal-to-noise ratio in dB with peak 1.0; +infinity for identical images.
inline double psnr(const Image& a, const Image& b) {
  if (a.dims() != b.dims())
    throw ParameterError("psnr: shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  if (a.empty()) throw ParameterError("psnr: empty images");
  double sse = 0.0;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(pa.size());
  return 10.0 * std::log10(1.0 / mse);
}

/// Elementwise compress; output order always matches input order.
///
/// Work is split across `workers` threads (0 = hardware concurrency). The first
/// failing element (lowest index) is reported with its index.
inline std::vector<Image> batch_compress(const std::vector<Image>& xs, const CompressionSpec& spec,
                                         unsigned workers = 1) {
  std::vector<Image> out(xs.size());
  if (xs.empty()) return out;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, xs.size()));

  struct Failure {
    std::size_t index;
    std::string what;
    bool parameter;
  };
  std::vector<std::optional<Failure>> errors(workers);
  auto run = [&](unsigned w) {
    for (std::size_t i = w; i < xs.size(); i += workers) {
      try {
        out[i] = compress(xs[i], spec);
      } catch (const ParameterError& e) {
        errors[w] = Failure{i, e.what(), true};
        return;
      } catch (const Error& e) {
        errors[w] = Failure{i, e.what(), false};
        return;
      }
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  std::optional<Failure> first;
  for (const auto& e : errors)
    if (e && (!first || e->index < first->index)) first = e;
  if (first) {
    const std::string msg = "batch_compress: element " + std::to_string(first->index) + ": " + first->what;
    if (first->parameter) throw ParameterError(msg);
    throw CodecError(msg);
  }
  return out;
}

}  // namespace crbd::codec
