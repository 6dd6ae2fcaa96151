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
/// Model-derived triggers: a rectangular patch optimized so that chosen
/// neurons of an internal layer approach a target activation (a simplified
/// neuron-activation-maximization trigger).

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "crbd/core/error.hpp"
#include "crbd/core/image.hpp"
#include "crbd/nn/model.hpp"
#include "crbd/trigger/trigger.hpp"

namespace crbd::trigger {

struct PixelRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

struct TrojanForgeConfig {
  std::string layer;            // feature layer name in the model registry
  std::vector<int> neurons;     // flattened indices into that layer's output
  PixelRect region;             // trigger area
  int steps = 200;
  double step_size = 0.05;      // max per-pixel change per step
  double target_value = 10.0;   // activation the neurons are driven toward

  void validate(const ImageDims& dims) const {
    if (steps < 1) throw ParameterError("trojan forging needs steps >= 1");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ParameterError("trojan step_size must be positive");
    if (!std::isfinite(target_value)) throw ParameterError("trojan target_value must be finite");
    if (region.width < 1 || region.height < 1 || region.x < 0 || region.y < 0 ||
        region.x + region.width > dims.width || region.y + region.height > dims.height)
      throw ParameterError("trojan mask region must lie inside the " + to_string(dims) + " image");
    if (neurons.empty()) throw ConfigError("trojan forging needs at least one target neuron");
  }
};

namespace detail {

template <class T>
double neuron_objective(nn::Model<T>& model, const Image& x, const TrojanForgeConfig& cfg, nn::Tensor<T>* feat_grad) {
  std::vector<const Image*> one{&x};
  model.forward(nn::images_to_tensor<T>(std::span<const Image* const>(one)), false);
  const auto f = model.feature(cfg.layer);
  double loss = 0.0;
  if (feat_grad) *feat_grad = nn::Tensor<T>(1, f.sample_shape(), T(0));
  const double k = static_cast<double>(cfg.neurons.size());
  for (int n : cfg.neurons) {
    const double d = static_cast<double>(f[static_cast<std::size_t>(n)]) - cfg.target_value;
    loss += d * d / k;
    if (feat_grad) (*feat_grad)[static_cast<std::size_t>(n)] += static_cast<T>(2.0 * d / k);
  }
  if (!std::isfinite(loss)) throw NumericError("trojan objective is not finite");
  return loss;
}

}  // namespace detail

/// Mean activation of the configured neurons for one input (inference mode).
template <class T>
double mean_neuron_activation(nn::Model<T>& model, const Image& x, const std::string& layer,
                              const std::vector<int>& neurons) {
  std::vector<const Image*> one{&x};
  model.forward(nn::images_to_tensor<T>(std::span<const Image* const>(one)), false);
  const auto f = model.feature(layer);
  double s = 0.0;
  for (int n : neurons) s += static_cast<double>(f[static_cast<std::size_t>(n)]);
  return s / static_cast<double>(neurons.size());
}

/// Optimizes a patch inside `cfg.region` by normalized gradient descent on
/// mean_k (a_k - target)^2, starting from mid-gray on a mid-gray canvas.
/// Returns a blend-1 pattern whose mask is the region; the perturbation is
/// exactly zero outside it. Model parameters are left untouched.
template <class T>
TriggerPattern make_trojan_trigger(nn::Model<T>& model, const TrojanForgeConfig& cfg) {
  const auto& in = model.input_shape();
  const ImageDims dims{in.at(0), in.at(1), in.at(2)};
  cfg.validate(dims);
  const int li = model.layer_index(cfg.layer);
  const auto layers = model.list_feature_layers();
  const auto dim = layers.at(static_cast<std::size_t>(li)).feature_dim;
  for (int n : cfg.neurons)
    if (n < 0 || static_cast<std::size_t>(n) >= dim)
      throw ConfigError("neuron " + std::to_string(n) + " outside layer '" + cfg.layer + "' (" + std::to_string(dim) +
                        " units)");

  TriggerPattern t;
  t.kind = TriggerKind::trojan;
  t.blend = 1.0f;
  t.mask = Image(dims, 0.0f);
  t.perturbation = Image(dims, 0.0f);
  for (int c = 0; c < dims.channels; ++c)
    for (int y = cfg.region.y; y < cfg.region.y + cfg.region.height; ++y)
      for (int x = cfg.region.x; x < cfg.region.x + cfg.region.width; ++x) {
        t.mask.at(c, y, x) = 1.0f;
        t.perturbation.at(c, y, x) = 0.5f;
      }
  const Image canvas(dims, 0.5f);
  nn::Tensor<T> fg, gin;
  const nn::Tensor<T> zero_logits(1, {model.num_classes()}, T(0));
  for (int step = 0; step < cfg.steps; ++step) {
    const Image x = stamp(canvas, t);
    detail::neuron_objective(model, x, cfg, &fg);
    model.backward(zero_logits, {{cfg.layer, fg}}, &gin);
    double gmax = 0.0;
    for (std::size_t i = 0; i < gin.size(); ++i)
      if (t.mask.pixels()[i] > 0.0f) gmax = std::max(gmax, std::abs(static_cast<double>(gin[i])));
    if (!std::isfinite(gmax)) throw NumericError("trojan gradient is not finite");
    if (gmax == 0.0) break;
    auto p = t.perturbation.pixels();
    const auto m = t.mask.pixels();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m[i] == 0.0f) continue;
      const double v = static_cast<double>(p[i]) - cfg.step_size * static_cast<double>(gin[i]) / gmax;
      p[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  model.zero_grad();
  for (auto& v : t.perturbation.pixels()) v = from_u16(to_u16(v));
  t.params = {{"layer", cfg.layer},
              {"neurons", cfg.neurons},
              {"region", {cfg.region.x, cfg.region.y, cfg.region.width, cfg.region.height}},
              {"steps", cfg.steps},
              {"step_size", cfg.step_size},
              {"target_value", cfg.target_value},
              {"model_checksum", model.checksum()}};
  t.validate();
  return t;
}

}  // namespace crbd::trigger
