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
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crbd/core/error.hpp"
#include "crbd/core/image.hpp"

namespace crbd::nn {

/// Per-sample shape (batch dimension excluded).
using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<MatRM<T>>;
template <class T>
using CMapMat = Eigen::Map<const MatRM<T>>;

/// Dense row-major tensor whose first dimension is the batch.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int batch, Shape sample_shape, T fill = T(0))
      : batch_(batch), sample_(std::move(sample_shape)), data_(static_cast<std::size_t>(batch) * shape_size(sample_), fill) {}

  [[nodiscard]] int batch() const { return batch_; }
  [[nodiscard]] const Shape& sample_shape() const { return sample_; }
  [[nodiscard]] std::size_t sample_size() const { return shape_size(sample_); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }
  [[nodiscard]] std::span<T> sample(int n) { return {data_.data() + n * sample_size(), sample_size()}; }
  [[nodiscard]] std::span<const T> sample(int n) const { return {data_.data() + n * sample_size(), sample_size()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Resizes in place, reusing storage. Contents are unspecified afterwards.
  void resize(int batch, const Shape& sample_shape) {
    batch_ = batch;
    sample_ = sample_shape;
    data_.resize(static_cast<std::size_t>(batch) * shape_size(sample_));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, different per-sample shape of equal size.
  void reshape(const Shape& sample_shape) {
    if (shape_size(sample_shape) != sample_size())
      throw ContractError("reshape " + shape_string(sample_) + " -> " + shape_string(sample_shape));
    sample_ = sample_shape;
  }

  /// [batch, sample_size] view.
  [[nodiscard]] MapMat<T> matrix() { return MapMat<T>(data_.data(), batch_, static_cast<Eigen::Index>(sample_size())); }
  [[nodiscard]] CMapMat<T> matrix() const {
    return CMapMat<T>(data_.data(), batch_, static_cast<Eigen::Index>(sample_size()));
  }

  template <class U>
  [[nodiscard]] Tensor<U> cast() const {
    Tensor<U> out(batch_, sample_);
    std::transform(data_.begin(), data_.end(), out.values().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Rows [first, first + count) as a new tensor.
  [[nodiscard]] Tensor slice(int first, int count) const {
    Tensor out(count, sample_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * sample_size()), out.size(), out.data_.begin());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int batch_ = 0;
  Shape sample_;
  // Aligned storage keeps Eigen's vectorised reduction order independent of
  // where the allocator happened to place the buffer, so runs are bit-reproducible.
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

/// Packs images into a [N, C, H, W] tensor.
template <class T>
Tensor<T> images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw ParameterError("images_to_tensor: empty batch");
  const ImageDims d = images.front()->dims();
  Tensor<T> out(static_cast<int>(images.size()), Shape{d.channels, d.height, d.width});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->dims() != d) throw ParameterError("images_to_tensor: mixed image dims in batch");
    auto dst = out.sample(static_cast<int>(n));
    const auto src = images[n]->pixels();
    std::transform(src.begin(), src.end(), dst.begin(), [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <class T>
Tensor<T> images_to_tensor(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return images_to_tensor<T>(std::span<const Image* const>(ptrs));
}

}  // namespace crbd::nn
