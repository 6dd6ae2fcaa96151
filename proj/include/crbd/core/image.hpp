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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crbd/core/error.hpp"

namespace crbd {

struct ImageDims {
  int channels = 3;
  int height = 32;
  int width = 32;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  [[nodiscard]] bool valid() const { return channels > 0 && height > 0 && width > 0; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

inline std::string to_string(const ImageDims& d) {
  return std::to_string(d.channels) + "x" + std::to_string(d.height) + "x" +
         std::to_string(d.width);
}

/// Planar (CHW) image with pixel values in normalized [0,1] units.
///
/// All in-memory pixel processing happens in this domain; 8-bit conversion
/// only happens when crossing a codec or file boundary.
class Image {
 public:
  Image() = default;
  explicit Image(ImageDims dims, float fill = 0.0f) : dims_(dims), data_(dims.size(), fill) {
    if (!dims.valid()) throw ParameterError("image dimensions must be positive");
  }
  Image(ImageDims dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
    if (!dims.valid()) throw ParameterError("image dimensions must be positive");
    if (data_.size() != dims.size())
      throw ParameterError("image buffer size " + std::to_string(data_.size()) +
                           " does not match dims " + to_string(dims));
  }

  [[nodiscard]] const ImageDims& dims() const { return dims_; }
  [[nodiscard]] int channels() const { return dims_.channels; }
  [[nodiscard]] int height() const { return dims_.height; }
  [[nodiscard]] int width() const { return dims_.width; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] float& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dims_.height + y) * dims_.width + x];
  }
  [[nodiscard]] float at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dims_.height + y) * dims_.width + x];
  }

  [[nodiscard]] std::span<float> pixels() { return data_; }
  [[nodiscard]] std::span<const float> pixels() const { return data_; }
  [[nodiscard]] const std::vector<float>& data() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  ImageDims dims_{};
  std::vector<float> data_;
};

inline std::uint8_t to_u8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float from_u8(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

/// Rounds every pixel onto the 8-bit grid, the same quantization a codec applies.
inline Image quantize_u8(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels()) v = from_u8(to_u8(v));
  return out;
}

inline std::uint16_t to_u16(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint16_t>(std::lround(static_cast<double>(c) * 65535.0));
}

inline float from_u16(std::uint16_t v) {
  return static_cast<float>(static_cast<double>(v) / 65535.0);
}

inline void clamp_unit(std::span<float> px) {
  for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace crbd
