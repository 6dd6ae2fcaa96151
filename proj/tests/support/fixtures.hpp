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
/// Deterministic fixtures shared by the unit, integration and acceptance
/// tests: natural-looking images, tiny labeled sets, hand-built models.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "crbd/core/image.hpp"
#include "crbd/core/rng.hpp"
#include "crbd/data/dataset.hpp"
#include "crbd/nn/model.hpp"

namespace crbd::testing {

/// Smooth scene: two-tone gradient, a soft disc and a grating, light noise.
inline Image scene_image(const ImageDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  Image img(dims);
  const double pi = std::numbers::pi;
  const double cx = rng.uniform(0.3, 0.7) * dims.width, cy = rng.uniform(0.3, 0.7) * dims.height;
  const double r = rng.uniform(0.15, 0.3) * dims.width;
  const double f = rng.uniform(0.05, 0.2), th = rng.uniform(0.0, pi);
  std::vector<double> a(static_cast<std::size_t>(dims.channels)), b(a.size()), d(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) {
    a[c] = rng.uniform(0.1, 0.9);
    b[c] = rng.uniform(0.1, 0.9);
    d[c] = rng.uniform(0.0, 1.0);
  }
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x) {
      const double u = static_cast<double>(x + y) / (dims.width + dims.height);
      const double in = std::hypot(x - cx, y - cy) < r ? 1.0 : 0.0;
      const double g = 0.12 * std::sin(2 * pi * f * (x * std::cos(th) + y * std::sin(th)));
      for (int c = 0; c < dims.channels; ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double v = (1 - in) * (a[k] * (1 - u) + b[k] * u) + in * d[k] + g + rng.normal(0.0, 0.01);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return quantize_u8(img);
}

/// The codec fixture set: scenes at several sizes plus procedural class images.
inline std::vector<Image> codec_fixtures() {
  std::vector<Image> out;
  for (std::uint64_t s = 0; s < 4; ++s) out.push_back(scene_image({3, 32, 32}, 100 + s));
  out.push_back(scene_image({3, 64, 64}, 200));
  out.push_back(scene_image({3, 48, 40}, 201));
  out.push_back(scene_image({3, 128, 128}, 202));
  const auto syn = data::make_synthetic(4, 0, 5);
  for (const auto& x : syn.train.images) out.push_back(x);
  return out;
}

/// Small labeled set with `n` images, balanced over `classes`.
inline data::LabeledImages labeled_fixture(std::size_t n, int classes = 10, const ImageDims& dims = {3, 32, 32},
                                           std::uint64_t seed = 3) {
  return data::make_synthetic(n, 0, seed, dims, classes).train;
}

/// Model spec of a bare flatten + linear classifier over `dims`.
inline nlohmann::json linear_spec(const ImageDims& dims) {
  return {{"id", "linear"},
          {"input", {dims.channels, dims.height, dims.width}},
          {"layers",
           nlohmann::json::array({{{"name", "flatten"}, {"type", "flatten"}},
                                  {{"name", "fc"}, {"type", "linear"}, {"out", "classes"}}})},
          {"default_selector", nlohmann::json::array({{{"layer", "flatten"}, {"weight", 1.0}}})}};
}

/// A linear model whose logits ignore the input and always favor `label`.
template <class T = float>
nn::Model<T> constant_model(const ImageDims& dims, int classes, int label) {
  auto m = nn::Model<T>::from_spec(linear_spec(dims), classes, 1);
  for (auto& [name, p] : m.named_params()) {
    p->value.fill(T(0));
    if (name == "fc.bias") p->value[static_cast<std::size_t>(label)] = T(1);
  }
  return m;
}

/// Scratch directory under the build tree, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("crbd-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace crbd::testing
