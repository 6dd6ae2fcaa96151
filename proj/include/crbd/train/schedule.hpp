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

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crbd/core/error.hpp"

namespace crbd::train {

/// Piecewise-constant learning rate: each (epoch, lr) point holds until the
/// next one starts.
struct LrSchedule {
  std::vector<std::pair<int, double>> points{{0, 0.1}, {40, 0.01}, {70, 0.001}};

  /// Epoch budget the default points are written for.
  static constexpr int kReferenceEpochs = 100;

  void validate() const {
    if (points.empty()) throw ConfigError("learning-rate schedule is empty");
    if (points.front().first != 0) throw ConfigError("learning-rate schedule must start at epoch 0");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!(points[i].second > 0.0) || !std::isfinite(points[i].second))
        throw ConfigError("learning rate at epoch " + std::to_string(points[i].first) + " must be positive");
      if (i > 0 && points[i].first <= points[i - 1].first)
        throw ConfigError("learning-rate schedule epochs must be strictly increasing");
    }
  }

  /// Same shape over a different epoch budget: boundary k moves to
  /// round(k * to / from). Boundaries that collide are dropped (the later
  /// rate wins).
  [[nodiscard]] LrSchedule scaled(int from_epochs, int to_epochs) const {
    if (from_epochs <= 0 || to_epochs <= 0) throw ConfigError("schedule scaling needs positive epoch counts");
    LrSchedule out;
    out.points.clear();
    for (const auto& [e, lr] : points) {
      const int ne = static_cast<int>(std::lround(static_cast<double>(e) * to_epochs / from_epochs));
      if (!out.points.empty() && out.points.back().first == ne)
        out.points.back().second = lr;
      else
        out.points.emplace_back(ne, lr);
    }
    return out;
  }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// Learning rate in effect at `epoch` (0-based).
inline double epoch_lr(const LrSchedule& s, int epoch) {
  if (epoch < 0) throw ParameterError("epoch must be >= 0");
  if (s.points.empty()) throw ConfigError("learning-rate schedule is empty");
  double lr = s.points.front().second;
  for (const auto& [e, v] : s.points)
    if (epoch >= e) lr = v;
  return lr;
}

inline void to_json(nlohmann::json& j, const LrSchedule& s) {
  j = nlohmann::json::array();
  for (const auto& [e, lr] : s.points) j.push_back({e, lr});
}

inline void from_json(const nlohmann::json& j, LrSchedule& s) {
  s.points.clear();
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) throw ConfigError("schedule entries must be [epoch, lr] pairs");
    s.points.emplace_back(p[0].get<int>(), p[1].get<double>());
  }
}

}  // namespace crbd::train
