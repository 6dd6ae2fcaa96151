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
/// Studies that train one model per configuration point.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "crbd/eval/metrics.hpp"
#include "crbd/poison/plan.hpp"
#include "crbd/train/trainer.hpp"

namespace crbd::eval {

struct InjectionRateStudyConfig {
  int n_normal = 1000;                       // |S_b| at every point
  std::vector<CompressionSpec> codecs;       // codecs sharing each compressed count
  std::vector<int> compressed_counts;        // total |S_bc| per point, ascending
  std::vector<CompressionSpec> eval_specs;   // ASR_bc columns of each report
  train::TrainConfig train;                  // mode is chosen per point
  train::FCConfig fc;
  std::uint64_t plan_seed = 0;
  std::filesystem::path persist_dir;         // per-point reports; empty = none
};

/// Splits a total compressed count over codecs; the remainder goes to the
/// first codecs so the per-codec counts differ by at most one.
inline std::vector<poison::CodecCount> split_compressed_count(int total, const std::vector<CompressionSpec>& codecs) {
  if (total < 0) throw ParameterError("compressed count must be >= 0");
  std::vector<poison::CodecCount> out;
  if (total == 0) return out;
  if (codecs.empty()) throw ParameterError("a positive compressed count needs at least one codec");
  const int k = static_cast<int>(codecs.size());
  for (int i = 0; i < k; ++i) out.push_back({codecs[static_cast<std::size_t>(i)], total / k + (i < total % k ? 1 : 0)});
  return out;
}

/// Trains one model per compressed count and reports TA/IR/ASR/ASR_bc for
/// each. A zero count trains the common-backdoor baseline. When
/// `persist_dir` is set each finished point is written there and reused on a
/// later call with the same configuration, so an interrupted study resumes.
template <class T>
SweepResult injection_rate_study(const LabeledImages& train_set, const LabeledImages& test,
                                 const trigger::TriggerPattern& trig, int y_t, const InjectionRateStudyConfig& cfg,
                                 const std::function<Model<T>()>& make_model,
                                 const std::function<void(const SweepPoint&)>& on_point = {}) {
  if (cfg.compressed_counts.empty()) throw ParameterError("injection-rate study needs at least one count");
  for (std::size_t i = 1; i < cfg.compressed_counts.size(); ++i)
    if (cfg.compressed_counts[i] <= cfg.compressed_counts[i - 1])
      throw ParameterError("injection-rate counts must be strictly increasing");
  SweepResult out;
  out.axis = "injection-rate";
  const nlohmann::json key = {{"n_normal", cfg.n_normal}, {"train", train::to_json_value(cfg.train)},
                              {"fc", train::to_json_value(cfg.fc)}, {"plan_seed", cfg.plan_seed},
                              {"trigger", trig.hash()}, {"train_set", train_set.name},
                              {"train_size", train_set.size()}};
  const std::string key_hash = hash_hex(key.dump());
  for (int count : cfg.compressed_counts) {
    const auto point_file = cfg.persist_dir.empty()
                                ? std::filesystem::path{}
                                : cfg.persist_dir / ("count-" + std::to_string(count) + ".json");
    if (!point_file.empty() && std::filesystem::exists(point_file)) {
      std::ifstream in(point_file);
      const auto j = nlohmann::json::parse(in);
      if (j.value("config_hash", "") == key_hash) {
        SweepPoint p{j.at("label").get<std::string>(), j.at("value").get<double>(), j.at("report").get<MetricsReport>()};
        if (on_point) on_point(p);
        out.points.push_back(std::move(p));
        continue;
      }
    }
    const auto per_codec = split_compressed_count(count, cfg.codecs);
    const auto plan = poison::build_plan(train_set, trig, y_t, cfg.n_normal, per_codec, cfg.plan_seed);
    const auto data = poison::materialize(plan, train_set, trig);
    train::TrainConfig tc = cfg.train;
    tc.mode = count == 0 ? train::TrainMode::common_backdoor : train::TrainMode::fc_backdoor;
    tc.checkpoint_dir.clear();
    Model<T> model = make_model();
    train::train(model, data, tc, cfg.fc);
    const Fraction ir{static_cast<std::int64_t>(plan.size()), static_cast<std::int64_t>(train_set.size())};
    MetricsReport r = evaluate(model, test, trig, y_t, cfg.eval_specs, ir);
    r.provenance["compressed_count"] = count;
    r.provenance["mode"] = train::train_mode_name(tc.mode);
    SweepPoint p{std::to_string(count), ir.value(), std::move(r)};
    if (!point_file.empty()) {
      std::filesystem::create_directories(cfg.persist_dir);
      std::ofstream(point_file) << nlohmann::json{{"config_hash", key_hash}, {"label", p.label}, {"value", p.value},
                                                  {"report", p.report}}
                                       .dump(1)
                                << "\n";
    }
    if (on_point) on_point(p);
    out.points.push_back(std::move(p));
  }
  out.validate();
  return out;
}

}  // namespace crbd::eval
