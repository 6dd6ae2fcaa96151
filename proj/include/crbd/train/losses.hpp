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
/// Cross-entropy, the feature-consistency distance and the combined backdoor
/// objective  L = CE(x_b, y_t) + CE(x_bc, y_t) + alpha * L_FC,
/// where L_FC = sum_i lambda_i * ||E_i(x_b) - E_i(x_bc)||_2.
///
/// All reductions accumulate in double. Every gradient helper returns the
/// derivative of the *reported* value, so `scale` multiplies both.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crbd/core/error.hpp"
#include "crbd/nn/model.hpp"
#include "crbd/nn/tensor.hpp"

namespace crbd::train {

using nn::LayerSelector;
using nn::Tensor;

template <class T>
using FeatureMap = std::map<std::string, Tensor<T>>;

/// Euclidean norm of u - v.
template <class T>
double l2_dist(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size())
    throw ParameterError("l2_dist: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = static_cast<double>(u[i]) - static_cast<double>(v[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <class T>
double l2_dist(const std::vector<T>& u, const std::vector<T>& v) {
  return l2_dist(std::span<const T>(u), std::span<const T>(v));
}

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
}

template <class T>
const Tensor<T>& require_layer(const FeatureMap<T>& m, const std::string& layer, const char* which) {
  const auto it = m.find(layer);
  if (it == m.end()) throw ContractError(std::string(which) + " features lack selector layer '" + layer + "'");
  return it->second;
}

}  // namespace detail

/// Weighted feature distance averaged over the P pairs of a batch. `fb` and
/// `fbc` map each selector layer to a [P, D] tensor whose row p belongs to
/// pair p. Layers with weight 0 are skipped.
template <class T>
double fc_loss(const FeatureMap<T>& fb, const FeatureMap<T>& fbc, const LayerSelector& sel) {
  double total = 0.0;
  for (const auto& e : sel.entries) {
    const auto& a = detail::require_layer(fb, e.layer, "backdoor");
    const auto& b = detail::require_layer(fbc, e.layer, "compressed");
    if (e.weight == 0.0) continue;
    if (a.batch() != b.batch() || a.sample_size() != b.sample_size())
      throw ParameterError("fc_loss: feature shapes differ at layer '" + e.layer + "'");
    if (a.batch() == 0) continue;
    double sum = 0.0;
    for (int p = 0; p < a.batch(); ++p) sum += l2_dist(a.sample(p), b.sample(p));
    total += e.weight * sum / a.batch();
  }
  detail::require_finite(total, "fc_loss");
  return total;
}

/// fc_loss over row pairs of one combined feature batch. `feats` maps layer
/// -> [N, D]; each pair (i, j) compares row i (x_b) with row j (x_bc).
/// When `grads` is given, scale * d(loss)/d(feature) is added into it
/// (entries are created as zero tensors on demand).
template <class T>
double fc_loss_rows(const FeatureMap<T>& feats, std::span<const std::pair<int, int>> pairs, const LayerSelector& sel,
                    FeatureMap<T>* grads = nullptr, double scale = 1.0) {
  if (pairs.empty()) return 0.0;
  const double inv_p = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& e : sel.entries) {
    const auto& f = detail::require_layer(feats, e.layer, "batch");
    if (e.weight == 0.0) continue;
    Tensor<T>* g = nullptr;
    if (grads) {
      auto [it, inserted] = grads->try_emplace(e.layer, f.batch(), f.sample_shape(), T(0));
      g = &it->second;
    }
    double sum = 0.0;
    for (const auto& [i, j] : pairs) {
      const auto u = f.sample(i);
      const auto v = f.sample(j);
      const double d = l2_dist(u, v);
      sum += d;
      if (g && d > 0.0) {
        const double c = scale * e.weight * inv_p / d;
        auto gu = g->sample(i);
        auto gv = g->sample(j);
        for (std::size_t k = 0; k < u.size(); ++k) {
          const double diff = static_cast<double>(u[k]) - static_cast<double>(v[k]);
          gu[k] += static_cast<T>(c * diff);
          gv[k] -= static_cast<T>(c * diff);
        }
      }
    }
    total += e.weight * sum * inv_p;
  }
  detail::require_finite(total, "fc_loss");
  return total;
}

/// Mean cross-entropy of `logits` rows listed in `rows` against `labels`
/// (aligned with `rows`). With `grad`, adds scale * dCE/dlogits.
template <class T>
double cross_entropy_rows(const Tensor<T>& logits, std::span<const int> rows, std::span<const int> labels,
                          Tensor<T>* grad = nullptr, double scale = 1.0) {
  if (rows.size() != labels.size()) throw ParameterError("cross_entropy: rows/labels size mismatch");
  if (rows.empty()) return 0.0;
  const int c = static_cast<int>(logits.sample_size());
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto z = logits.sample(rows[r]);
    const int y = labels[r];
    if (y < 0 || y >= c) throw ParameterError("cross_entropy: label " + std::to_string(y) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < c; ++k) {
      const double v = static_cast<double>(z[k]);
      if (!std::isfinite(v)) throw NumericError("cross_entropy: non-finite logit");
      mx = std::max(mx, v);
    }
    double se = 0.0;
    for (int k = 0; k < c; ++k) se += std::exp(static_cast<double>(z[k]) - mx);
    const double lse = mx + std::log(se);
    total += lse - static_cast<double>(z[y]);
    if (grad) {
      auto g = grad->sample(rows[r]);
      for (int k = 0; k < c; ++k) {
        const double pk = std::exp(static_cast<double>(z[k]) - lse);
        g[k] += static_cast<T>(scale * inv_n * (pk - (k == y ? 1.0 : 0.0)));
      }
    }
  }
  return total * inv_n;
}

/// Mean cross-entropy of every row of `logits` against one label.
template <class T>
double cross_entropy(const Tensor<T>& logits, int label) {
  std::vector<int> rows(static_cast<std::size_t>(logits.batch()));
  std::iota(rows.begin(), rows.end(), 0);
  const std::vector<int> labels(rows.size(), label);
  return cross_entropy_rows(logits, std::span<const int>(rows), std::span<const int>(labels));
}

/// Mean cross-entropy against per-row labels.
template <class T>
double cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  std::vector<int> rows(static_cast<std::size_t>(logits.batch()));
  std::iota(rows.begin(), rows.end(), 0);
  return cross_entropy_rows(logits, std::span<const int>(rows), labels);
}

/// CE(logits_b, y_t) + CE(logits_bc, y_t) + alpha * fc.
template <class T>
double total_loss(const Tensor<T>& logits_b, const Tensor<T>& logits_bc, int y_t, double fc, double alpha) {
  if (logits_b.batch() != logits_bc.batch()) throw ParameterError("total_loss: logits batches are not aligned");
  if (!std::isfinite(fc) || !std::isfinite(alpha)) throw NumericError("total_loss: non-finite fc or alpha");
  if (alpha < 0.0) throw ParameterError("total_loss: alpha must be >= 0");
  const double v = cross_entropy(logits_b, y_t) + cross_entropy(logits_bc, y_t) + alpha * fc;
  detail::require_finite(v, "total_loss");
  return v;
}

}  // namespace crbd::train
