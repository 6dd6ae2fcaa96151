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

#include <filesystem>
#include <optional>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "crbd/core/error.hpp"
#include "crbd/core/image.hpp"

namespace crbd::codec {

// OpenCV stores color images as interleaved BGR; Image is planar RGB.

inline cv::Mat to_mat_u8(const Image& img) {
  const int c = img.channels();
  if (c != 1 && c != 3) throw ParameterError("only 1- and 3-channel images can be encoded");
  cv::Mat m(img.height(), img.width(), c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int ch = 0; ch < c; ++ch) row[x * c + (c - 1 - ch)] = to_u8(img.at(ch, y, x));
  }
  return m;
}

inline cv::Mat to_mat_u16(const Image& img) {
  const int c = img.channels();
  if (c != 1 && c != 3) throw ParameterError("only 1- and 3-channel images can be written");
  cv::Mat m(img.height(), img.width(), c == 3 ? CV_16UC3 : CV_16UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int ch = 0; ch < c; ++ch) row[x * c + (c - 1 - ch)] = to_u16(img.at(ch, y, x));
  }
  return m;
}

/// Converts an 8- or 16-bit OpenCV matrix (1, 3 or 4 channels) to a planar image.
/// A fourth (alpha) channel is returned separately when `alpha` is non-null.
inline Image from_mat(const cv::Mat& m, std::optional<Image>* alpha = nullptr) {
  const int mc = m.channels();
  const bool wide = m.depth() == CV_16U;
  if (m.depth() != CV_8U && !wide) throw ParameterError("unsupported image bit depth");
  const int c = mc == 1 ? 1 : 3;
  Image img(ImageDims{c, m.rows, m.cols});
  Image a;
  if (mc == 4) a = Image(ImageDims{1, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      auto value = [&](int k) {
        return wide ? from_u16(m.ptr<std::uint16_t>(y)[x * mc + k])
                    : from_u8(m.ptr<std::uint8_t>(y)[x * mc + k]);
      };
      if (c == 1) {
        img.at(0, y, x) = value(0);
      } else {
        for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = value(2 - ch);
      }
      if (mc == 4) a.at(0, y, x) = value(3);
    }
  }
  if (alpha != nullptr) {
    if (mc == 4)
      *alpha = std::move(a);
    else
      alpha->reset();
  }
  return img;
}

/// Reads any image format OpenCV understands, keeping an alpha channel if present.
inline Image read_image(const std::filesystem::path& path, std::optional<Image>* alpha = nullptr) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image '" + path.string() + "'");
  return from_mat(m, alpha);
}

/// Writes a lossless PNG. 16-bit depth keeps trigger tensors exact on the u16 grid.
inline void write_png(const std::filesystem::path& path, const Image& img, bool sixteen_bit = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const cv::Mat m = sixteen_bit ? to_mat_u16(img) : to_mat_u8(img);
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write '" + path.string() + "'");
}

}  // namespace crbd::codec
