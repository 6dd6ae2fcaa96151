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
/// Built-in architectures: a CIFAR-style ResNet-18, a VGG-16 with batch norm,
/// and a small 2-conv/2-FC network for fast experiments.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "crbd/core/error.hpp"
#include "crbd/core/image.hpp"
#include "crbd/nn/model.hpp"

namespace crbd::nn {

/// Per-channel statistics of the CIFAR-10 training set.
inline nlohmann::json cifar_normalize_layer() {
  return {{"name", "normalize"},
          {"type", "normalize"},
          {"mean", {0.4914, 0.4822, 0.4465}},
          {"std", {0.2470, 0.2435, 0.2616}}};
}

inline nlohmann::json resnet18_spec(const ImageDims& dims = {}) {
  using nlohmann::json;
  json layers = json::array();
  layers.push_back(cifar_normalize_layer());
  layers.push_back({{"name", "conv1"}, {"type", "conv"}, {"out", 64}, {"kernel", 3}, {"stride", 1}, {"pad", 1}, {"bias", false}});
  layers.push_back({{"name", "bn1"}, {"type", "bn"}});
  layers.push_back({{"name", "relu1"}, {"type", "relu"}});
  const int widths[4] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s)
    for (int b = 0; b < 2; ++b)
      layers.push_back({{"name", "layer" + std::to_string(s + 1) + "." + std::to_string(b)},
                        {"type", "basicblock"},
                        {"out", widths[s]},
                        {"stride", (s > 0 && b == 0) ? 2 : 1}});
  layers.push_back({{"name", "avgpool"}, {"type", "avgpool"}});
  layers.push_back({{"name", "flatten"}, {"type", "flatten"}});
  layers.push_back({{"name", "fc"}, {"type", "linear"}, {"out", "classes"}});
  return {{"id", "resnet18"},
          {"input", {dims.channels, dims.height, dims.width}},
          {"layers", layers},
          // Consistency on the 512-d input of the single FC head; the
          // second-to-last block output is listed with weight 0.
          {"default_selector", json::array({{{"layer", "flatten"}, {"weight", 1.0}},
                                            {{"layer", "layer4.1"}, {"weight", 0.0}}})}};
}

inline nlohmann::json vgg16_spec(const ImageDims& dims = {}) {
  using nlohmann::json;
  json layers = json::array();
  layers.push_back(cifar_normalize_layer());
  const int cfg[5][3] = {{64, 64, 0}, {128, 128, 0}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  int h = dims.height;
  int w = dims.width;
  for (int s = 0; s < 5; ++s) {
    for (int k = 0; k < 3 && cfg[s][k] > 0; ++k) {
      const std::string n = std::to_string(s + 1) + "_" + std::to_string(k + 1);
      layers.push_back({{"name", "conv" + n}, {"type", "conv"}, {"out", cfg[s][k]}, {"kernel", 3}, {"pad", 1}, {"bias", false}});
      layers.push_back({{"name", "bn" + n}, {"type", "bn"}});
      layers.push_back({{"name", "relu" + n}, {"type", "relu"}});
    }
    layers.push_back({{"name", "pool" + std::to_string(s + 1)}, {"type", "maxpool"}, {"kernel", 2}, {"stride", 2}});
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1) throw ConfigError("vgg16 needs inputs of at least 32x32");
  // Full-width 4096 heads for large (face-sized) inputs, 512 for 32x32.
  const int hidden = (h * w > 1) ? 4096 : 512;
  layers.push_back({{"name", "flatten"}, {"type", "flatten"}});
  layers.push_back({{"name", "fc6"}, {"type", "linear"}, {"out", hidden}});
  layers.push_back({{"name", "relu6"}, {"type", "relu"}});
  layers.push_back({{"name", "fc7"}, {"type", "linear"}, {"out", hidden}});
  layers.push_back({{"name", "relu7"}, {"type", "relu"}});
  layers.push_back({{"name", "fc8"}, {"type", "linear"}, {"out", "classes"}});
  return {{"id", "vgg16"},
          {"input", {dims.channels, dims.height, dims.width}},
          {"layers", layers},
          {"default_selector", json::array({{{"layer", "relu7"}, {"weight", 0.5}},
                                            {{"layer", "relu6"}, {"weight", 0.5}}})}};
}

inline nlohmann::json smallcnn_spec(const ImageDims& dims = {}) {
  using nlohmann::json;
  json layers = json::array();
  layers.push_back(cifar_normalize_layer());
  layers.push_back({{"name", "conv1"}, {"type", "conv"}, {"out", 16}, {"kernel", 3}, {"stride", 1}, {"pad", 1}});
  layers.push_back({{"name", "relu1"}, {"type", "relu"}});
  layers.push_back({{"name", "pool1"}, {"type", "maxpool"}, {"kernel", 2}, {"stride", 2}});
  layers.push_back({{"name", "conv2"}, {"type", "conv"}, {"out", 32}, {"kernel", 3}, {"stride", 1}, {"pad", 1}});
  layers.push_back({{"name", "relu2"}, {"type", "relu"}});
  layers.push_back({{"name", "pool2"}, {"type", "maxpool"}, {"kernel", 2}, {"stride", 2}});
  layers.push_back({{"name", "flatten"}, {"type", "flatten"}});
  layers.push_back({{"name", "fc1"}, {"type", "linear"}, {"out", 128}});
  layers.push_back({{"name", "relu3"}, {"type", "relu"}});
  layers.push_back({{"name", "fc2"}, {"type", "linear"}, {"out", "classes"}});
  return {{"id", "smallcnn"},
          {"input", {dims.channels, dims.height, dims.width}},
          {"layers", layers},
          {"default_selector", json::array({{{"layer", "relu3"}, {"weight", 0.5}},
                                            {{"layer", "flatten"}, {"weight", 0.5}}})}};
}

/// Spec for a built-in architecture id, or the contents of a JSON file when
/// `arch` names an existing path.
inline nlohmann::json architecture_spec(const std::string& arch, const ImageDims& dims = {}) {
  if (arch == "resnet18") return resnet18_spec(dims);
  if (arch == "vgg16") return vgg16_spec(dims);
  if (arch == "smallcnn") return smallcnn_spec(dims);
  if (arch.ends_with(".json") && std::filesystem::exists(arch)) {
    std::ifstream in(arch);
    try {
      return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("architecture file " + arch + ": " + e.what());
    }
  }
  throw ConfigError("unknown architecture '" + arch + "' (expected resnet18, vgg16, smallcnn or a .json file)");
}

template <class T = float>
Model<T> build_model(const std::string& arch, int num_classes, std::uint64_t seed, const ImageDims& dims = {}) {
  return Model<T>::from_spec(architecture_spec(arch, dims), num_classes, seed);
}

}  // namespace crbd::nn
