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
/// SGD training for clean, common-backdoor and feature-consistency backdoor
/// models.
///
/// Each step runs one forward pass over the rows [clean | x_b | x_bc] and
/// minimizes
///   mean-CE(clean rows vs y, x_b and x_bc rows vs y_t) + alpha * L_FC(x_b, x_bc)
/// with L_FC averaged over the step's pairs. An epoch visits every clean image once,
/// every pairing link (x_b, x_bc) once, and every normal backdoor instance
/// without a compressed child once (CE only).

#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crbd/core/error.hpp"
#include "crbd/core/rng.hpp"
#include "crbd/nn/model.hpp"
#include "crbd/poison/plan.hpp"
#include "crbd/train/losses.hpp"
#include "crbd/train/schedule.hpp"

namespace crbd::train {

namespace fs = std::filesystem;
using nn::Model;

enum class TrainMode { clean, common_backdoor, fc_backdoor };

inline std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::clean: return "clean";
    case TrainMode::common_backdoor: return "common-backdoor";
    case TrainMode::fc_backdoor: return "fc-backdoor";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "clean") return TrainMode::clean;
  if (s == "common-backdoor") return TrainMode::common_backdoor;
  if (s == "fc-backdoor") return TrainMode::fc_backdoor;
  throw ConfigError("unknown training mode '" + s + "' (expected clean, common-backdoor, fc-backdoor)");
}

struct FCConfig {
  LayerSelector selector;
  double alpha = 0.1;
  std::string distance = "l2";

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
    if (distance != "l2") throw ConfigError("unsupported feature distance '" + distance + "' (only l2)");
    selector.validate();
  }
};

struct TrainConfig {
  int epochs = 100;
  LrSchedule schedule;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::fc_backdoor;
  bool augment = true;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  fs::path checkpoint_dir;   // empty = no checkpoints

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (mode == TrainMode::fc_backdoor && batch_size < 2)
      throw ConfigError("fc-backdoor training needs batch_size >= 2 so pairs share a step");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    schedule.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_clean = 0.0;     // CE on clean rows
  double loss_backdoor = 0.0;  // mean CE(x_b) + mean CE(x_bc)
  double loss_fc = 0.0;        // L_FC (before alpha)
  double loss_total = 0.0;
  double wall_seconds = 0.0;
  int steps = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  /// Loss columns only; wall time is excluded so traces can be compared.
  [[nodiscard]] std::vector<std::vector<double>> loss_trace() const {
    std::vector<std::vector<double>> out;
    for (const auto& e : epochs) out.push_back({e.lr, e.loss_clean, e.loss_backdoor, e.loss_fc, e.loss_total});
    return out;
  }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,lr,loss_clean,loss_backdoor,loss_fc,loss_total,steps,wall_seconds\n";
    os << std::setprecision(17);
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.lr << ',' << e.loss_clean << ',' << e.loss_backdoor << ',' << e.loss_fc << ','
         << e.loss_total << ',' << e.steps << ',' << std::setprecision(6) << e.wall_seconds << std::setprecision(17)
         << '\n';
    return os.str();
  }

  void write_csv(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path) << to_csv();
  }
};

/// Rows of one combined batch and what each contributes to the objective.
struct StepRows {
  std::vector<int> clean_rows;
  std::vector<int> clean_labels;
  std::vector<int> b_rows;   // normal backdoor instances (label y_t)
  std::vector<int> bc_rows;  // compressed backdoor instances (label y_t)
  std::vector<std::pair<int, int>> pairs;  // (x_b row, x_bc row)
  int target = 0;
};

struct StepLoss {
  double clean = 0.0;
  double b = 0.0;
  double bc = 0.0;
  double fc = 0.0;
  double ce = 0.0;  // combined-batch mean cross-entropy
  double total = 0.0;
};

/// Evaluates the objective on one batch and, when `accumulate_grads` is set,
/// adds its gradient into the model's parameter gradients.
///
/// Cross-entropy is one mean over every row of the combined batch (clean rows
/// against their labels, x_b and x_bc rows against y_t), so clean and poison
/// samples carry equal per-sample weight; L_FC is a mean over the pairs.
/// The reported `clean`/`b`/`bc` values are per-group means.
template <class T>
StepLoss step_objective(Model<T>& model, const Tensor<T>& x, const StepRows& rows, const FCConfig& fc, bool training,
                        bool accumulate_grads) {
  const Tensor<T>& logits = model.forward(x, training);
  Tensor<T> grad(logits.batch(), logits.sample_shape(), T(0));
  Tensor<T>* g = accumulate_grads ? &grad : nullptr;
  const double n_ce = static_cast<double>(rows.clean_rows.size() + rows.b_rows.size() + rows.bc_rows.size());
  auto share = [&](std::size_t n) { return n_ce > 0.0 ? static_cast<double>(n) / n_ce : 0.0; };
  StepLoss s;
  s.clean = cross_entropy_rows(logits, std::span<const int>(rows.clean_rows), std::span<const int>(rows.clean_labels), g,
                               share(rows.clean_rows.size()));
  const std::vector<int> tb(rows.b_rows.size(), rows.target);
  const std::vector<int> tbc(rows.bc_rows.size(), rows.target);
  s.b = cross_entropy_rows(logits, std::span<const int>(rows.b_rows), std::span<const int>(tb), g, share(tb.size()));
  s.bc = cross_entropy_rows(logits, std::span<const int>(rows.bc_rows), std::span<const int>(tbc), g, share(tbc.size()));
  FeatureMap<T> fgrads;
  if (!rows.pairs.empty() && fc.alpha > 0.0) {
    FeatureMap<T> feats;
    for (const auto& e : fc.selector.entries)
      if (e.weight > 0.0) feats.emplace(e.layer, model.feature(e.layer));
    s.fc = fc_loss_rows(feats, std::span<const std::pair<int, int>>(rows.pairs), fc.selector,
                        accumulate_grads ? &fgrads : nullptr, fc.alpha);
  }
  s.ce = share(rows.clean_rows.size()) * s.clean + share(tb.size()) * s.b + share(tbc.size()) * s.bc;
  s.total = s.ce + fc.alpha * s.fc;
  detail::require_finite(s.total, "training loss");
  if (accumulate_grads) model.backward(grad, fgrads);
  return s;
}

/// SGD with momentum and L2 weight decay: v = mu*v + (g + wd*theta); theta -= lr*v.
template <class T>
void sgd_update(Model<T>& model, double lr, double momentum, double weight_decay) {
  for (auto& [name, p] : model.named_params()) {
    if (p->velocity.size() != p->value.size()) p->velocity = Tensor<T>(p->value.batch(), p->value.sample_shape(), T(0));
    auto th = p->value.values();
    auto gr = p->grad.values();
    auto ve = p->velocity.values();
    for (std::size_t i = 0; i < th.size(); ++i) {
      const T gi = gr[i] + static_cast<T>(weight_decay) * th[i];
      ve[i] = static_cast<T>(momentum) * ve[i] + gi;
      th[i] -= static_cast<T>(lr) * ve[i];
    }
  }
}

namespace detail {

/// Random crop from a 4-pixel reflection-padded image plus a horizontal flip,
/// written into `dst`. Reflection (rather than zero) padding leaves no border
/// artifact that could separate augmented clean rows from poison rows.
inline void augment_into(const Image& src, std::span<float> dst, Rng& rng) {
  const int c = src.channels(), h = src.height(), w = src.width();
  const int dy = static_cast<int>(rng.below(9)) - 4;
  const int dx = static_cast<int>(rng.below(9)) - 4;
  const bool flip = rng.below(2) == 1;
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return std::clamp(i, 0, n - 1);
  };
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = reflect(y + dy, h);
        const int sx0 = reflect(x + dx, w);
        const int sx = flip ? (w - 1 - sx0) : sx0;
        dst[(static_cast<std::size_t>(ch) * h + y) * w + x] = src.at(ch, sy, sx);
      }
}

template <class T>
void copy_image(const Image& src, std::span<T> dst) {
  const auto px = src.pixels();
  std::transform(px.begin(), px.end(), dst.begin(), [](float v) { return static_cast<T>(v); });
}

/// A unit of poison work: a pairing link, or a normal instance on its own.
struct PoisonItem {
  int backdoor_id = 0;
  int compressed_id = -1;  // -1 = no compressed partner
};

inline std::vector<PoisonItem> poison_items(const poison::PoisonedDataset& data, TrainMode mode) {
  std::vector<PoisonItem> items;
  if (mode == TrainMode::clean) return items;
  std::vector<char> has_child(data.backdoor.size(), 0);
  if (mode == TrainMode::fc_backdoor)
    for (const auto& l : data.plan.pairing) {
      items.push_back({l.backdoor_id, l.compressed_id});
      has_child[static_cast<std::size_t>(l.backdoor_id)] = 1;
    }
  for (std::size_t b = 0; b < data.backdoor.size(); ++b)
    if (!has_child[b]) items.push_back({static_cast<int>(b), -1});
  return items;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place and returns the per-epoch history.
template <class T>
TrainHistory train(Model<T>& model, const poison::PoisonedDataset& data, const TrainConfig& tc, const FCConfig& fc,
                   const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (tc.mode == TrainMode::fc_backdoor) {
    fc.validate();
    model.check_selector(fc.selector);
    if (data.plan.pairing.empty() && fc.alpha > 0.0)
      throw ConfigError("fc-backdoor training with alpha > 0 needs compressed instances (pairing index is empty)");
  }
  if (tc.mode == TrainMode::common_backdoor && !data.compressed.empty())
    throw ConfigError("common-backdoor training expects a plan without compressed instances");
  if (tc.mode != TrainMode::clean && !data.has_poison())
    throw ConfigError(train_mode_name(tc.mode) + " training needs poisoned instances");
  const ImageDims dims = data.clean.dims;
  if (nn::Shape{dims.channels, dims.height, dims.width} != model.input_shape())
    throw ConfigError("dataset image dims " + to_string(dims) + " do not match the model input");

  const auto items_all = detail::poison_items(data, tc.mode);
  const std::size_t n_clean = data.clean.size();
  const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
  const std::size_t steps =
      n_clean > 0 ? (n_clean + bs - 1) / bs : (items_all.size() + bs - 1) / bs;
  if (steps == 0) throw ConfigError("nothing to train on");
  const std::size_t per_step = (items_all.size() + steps - 1) / steps;
  const FCConfig active_fc = tc.mode == TrainMode::fc_backdoor ? fc : FCConfig{fc.selector, 0.0, fc.distance};

  TrainHistory hist;
  Rng rng(derive_seed(tc.seed, "train"));
  std::vector<int> clean_order(n_clean);
  std::vector<detail::PoisonItem> items = items_all;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = epoch_lr(tc.schedule, epoch);
    std::iota(clean_order.begin(), clean_order.end(), 0);
    rng.shuffle(std::span<int>(clean_order));
    rng.shuffle(std::span<detail::PoisonItem>(items));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t c0 = std::min(n_clean, s * bs), c1 = std::min(n_clean, c0 + bs);
      const std::size_t i0 = std::min(items.size(), s * per_step), i1 = std::min(items.size(), i0 + per_step);
      StepRows rows;
      rows.target = data.target_label();
      std::size_t n_rows = c1 - c0;
      for (std::size_t i = i0; i < i1; ++i) n_rows += items[i].compressed_id >= 0 ? 2 : 1;
      if (n_rows == 0) continue;
      Tensor<T> x(static_cast<int>(n_rows), model.input_shape());
      int r = 0;
      for (std::size_t i = c0; i < c1; ++i, ++r) {
        const auto id = static_cast<std::size_t>(clean_order[i]);
        if (tc.augment) {
          std::vector<float> tmp(dims.size());
          detail::augment_into(data.clean.images[id], tmp, rng);
          std::transform(tmp.begin(), tmp.end(), x.sample(r).begin(), [](float v) { return static_cast<T>(v); });
        } else {
          detail::copy_image(data.clean.images[id], x.sample(r));
        }
        rows.clean_rows.push_back(r);
        rows.clean_labels.push_back(data.clean.labels[id]);
      }
      for (std::size_t i = i0; i < i1; ++i) {
        const auto& it = items[i];
        detail::copy_image(data.backdoor[static_cast<std::size_t>(it.backdoor_id)], x.sample(r));
        rows.b_rows.push_back(r);
        const int rb = r++;
        if (it.compressed_id >= 0) {
          detail::copy_image(data.compressed[static_cast<std::size_t>(it.compressed_id)], x.sample(r));
          rows.bc_rows.push_back(r);
          rows.pairs.emplace_back(rb, r++);
        }
      }
      model.zero_grad();
      StepLoss loss;
      try {
        loss = step_objective(model, x, rows, active_fc, true, true);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(s) + ": " +
                           e.what());
      }
      sgd_update(model, lr, tc.momentum, tc.weight_decay);
      rec.loss_clean += loss.clean;
      rec.loss_backdoor += loss.b + loss.bc;
      rec.loss_fc += loss.fc;
      rec.loss_total += loss.total;
      ++rec.steps;
    }
    if (rec.steps > 0) {
      const double inv = 1.0 / rec.steps;
      rec.loss_clean *= inv;
      rec.loss_backdoor *= inv;
      rec.loss_fc *= inv;
      rec.loss_total *= inv;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!tc.checkpoint_dir.empty() && tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 &&
        epoch + 1 < tc.epochs) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << (epoch + 1) << ".ckpt";
      nn::save_checkpoint(model, tc.checkpoint_dir / name.str(), {{"epoch", epoch + 1}});
    }
  }
  if (!tc.checkpoint_dir.empty()) {
    nn::save_checkpoint(model, tc.checkpoint_dir / "final.ckpt", {{"epoch", tc.epochs}});
    hist.write_csv(tc.checkpoint_dir / "history.csv");
  }
  return hist;
}

inline nlohmann::json to_json_value(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"schedule", c.schedule},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"mode", train_mode_name(c.mode)},
          {"augment", c.augment},
          {"checkpoint_every", c.checkpoint_every}};
}

inline nlohmann::json to_json_value(const FCConfig& f) {
  return {{"selector", f.selector}, {"alpha", f.alpha}, {"distance", f.distance}};
}

}  // namespace crbd::train
