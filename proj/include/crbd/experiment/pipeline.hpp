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
/// Individual experiment stages (prepare, trigger, poison, train, evaluate)
/// driven by a manifest. The runner chains them; the CLI exposes each one.

#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "crbd/codec/codec.hpp"
#include "crbd/data/dataset.hpp"
#include "crbd/eval/metrics.hpp"
#include "crbd/experiment/manifest.hpp"
#include "crbd/nn/zoo.hpp"
#include "crbd/poison/plan.hpp"
#include "crbd/train/trainer.hpp"
#include "crbd/trigger/trigger.hpp"
#include "crbd/trigger/trojan.hpp"

namespace crbd::experiment {

namespace fs = std::filesystem;
using nn::Model;

inline ImageDims manifest_dims(const ExperimentManifest& m) {
  return ImageDims{m.dataset.image_size.at(0), m.dataset.image_size.at(1), m.dataset.image_size.at(2)};
}

/// Loads (or generates) the train/test splits and applies the subsets.
inline data::DatasetSplits prepare_dataset(const ExperimentManifest& m) {
  const auto& d = m.dataset;
  const ImageDims dims = manifest_dims(m);
  data::DatasetSplits s;
  if (d.name == "synthetic") {
    s = data::make_synthetic(d.synthetic_train, d.synthetic_test, d.seed, dims);
  } else if (d.name == "cifar10") {
    if (dims != ImageDims{3, 32, 32}) throw ConfigError("cifar10 images are 3x32x32; dataset.image_size disagrees");
    s = data::load_cifar10(d.root.empty() ? data::data_root() : m.resolve(d.root), d.fetch);
  } else {
    s = data::load_image_folder(m.resolve(d.root), dims, d.classes);
  }
  if (d.train_subset > 0 && d.train_subset < s.train.size()) s.train = data::stratified_subset(s.train, d.train_subset, d.seed);
  if (d.test_subset > 0 && d.test_subset < s.test.size()) s.test = data::stratified_subset(s.test, d.test_subset, d.seed);
  s.train.validate();
  s.test.validate();
  return s;
}

/// Seeds of one replicate. Every run of a replicate shares them, so arms
/// differ only in their configuration (same init, same poison sources,
/// same batch order).
struct ReplicateSeeds {
  std::uint64_t replicate = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t poison = 0;
};

inline ReplicateSeeds replicate_seeds(const ExperimentManifest& m, const PoisonSpec& p, std::uint64_t replicate) {
  const std::uint64_t base = derive_seed(m.seed, "replicate:" + std::to_string(replicate));
  return {replicate, derive_seed(base, "init"), derive_seed(base, "train"),
          derive_seed(base, "poison:" + std::to_string(p.seed))};
}

inline std::string resolve_arch(const ExperimentManifest& m, const std::string& arch) {
  return arch.ends_with(".json") ? m.resolve(arch).string() : arch;
}

/// Fresh (or pretrained) model for a run.
inline Model<float> make_run_model(const ExperimentManifest& m, const ResolvedRun& r, const ReplicateSeeds& s,
                                   int num_classes) {
  if (!r.model.pretrained.empty()) {
    auto model = nn::load_checkpoint<float>(m.resolve(r.model.pretrained));
    if (model.num_classes() != num_classes) throw ConfigError("pretrained checkpoint has the wrong class count");
    return model;
  }
  return nn::build_model<float>(resolve_arch(m, r.model.arch), num_classes, s.init, manifest_dims(m));
}

inline train::TrainConfig train_config(const ResolvedRun& r, const ReplicateSeeds& s) {
  train::TrainConfig tc;
  tc.epochs = r.train.epochs;
  tc.schedule = r.train.schedule.scaled(r.train.schedule_epochs, r.train.epochs);
  tc.batch_size = r.train.batch_size;
  tc.momentum = r.train.momentum;
  tc.weight_decay = r.train.weight_decay;
  tc.seed = s.train;
  tc.mode = r.mode;
  tc.augment = r.train.augment;
  tc.checkpoint_every = r.train.checkpoint_every;
  return tc;
}

inline train::FCConfig fc_config(const ResolvedRun& r, const Model<float>& model) {
  train::FCConfig fc;
  fc.selector = r.fc.selector.value_or(model.default_selector());
  fc.alpha = r.fc.alpha;
  return fc;
}

/// Builds the manifest's trigger. Trojan triggers need the trained clean
/// model, supplied lazily by `clean_model`.
inline trigger::TriggerPattern build_trigger(const ExperimentManifest& m,
                                             const std::function<Model<float>&()>& clean_model = {}) {
  const auto& t = m.trigger;
  const ImageDims dims = manifest_dims(m);
  if (t.kind == "gaussian") return trigger::make_gaussian_trigger(dims, t.std, t.blend, t.seed);
  if (t.kind == "logo") {
    const auto asset = t.asset.empty() ? trigger::render_text_logo(t.text, t.text_height)
                                       : trigger::read_logo_asset(m.resolve(t.asset));
    auto pat = trigger::make_logo_trigger(asset, dims, {t.position.at(0), t.position.at(1)}, t.scale, t.blend);
    pat.seed = t.seed;
    return pat;
  }
  if (t.kind == "fixed-asset") {
    std::optional<fs::path> mask;
    if (!t.mask.empty()) mask = m.resolve(t.mask);
    auto pat = trigger::load_fixed_asset_trigger(m.resolve(t.asset), mask, t.blend);
    if (pat.dims() != dims) throw ConfigError("fixed-asset trigger dims differ from the dataset image size");
    pat.seed = t.seed;
    return pat;
  }
  if (!clean_model) throw ConfigError("trojan triggers need a trained clean model ('" + t.trojan.source_run + "')");
  trigger::TrojanForgeConfig cfg;
  cfg.layer = t.trojan.layer;
  cfg.neurons = t.trojan.neurons;
  cfg.region = {t.trojan.region.at(0), t.trojan.region.at(1), t.trojan.region.at(2), t.trojan.region.at(3)};
  cfg.steps = t.trojan.steps;
  cfg.step_size = t.trojan.step_size;
  cfg.target_value = t.trojan.target_value;
  auto pat = trigger::make_trojan_trigger(clean_model(), cfg);
  pat.seed = t.seed;
  return pat;
}

/// Parsed CompressionSpecs of a list of tags.
inline std::vector<codec::CompressionSpec> parse_specs(const std::vector<std::string>& tags) {
  std::vector<codec::CompressionSpec> out;
  for (const auto& t : tags) out.push_back(codec::CompressionSpec::parse(t));
  return out;
}

/// Poisoned training set of a run. Clean runs get the untouched split;
/// common-backdoor runs ignore per-codec counts (they have no S_bc).
inline poison::PoisonedDataset poison_for_run(const ResolvedRun& r, const ReplicateSeeds& s,
                                              const data::LabeledImages& train_set,
                                              const trigger::TriggerPattern& trig) {
  if (r.mode == train::TrainMode::clean) return poison::PoisonedDataset::clean_only(train_set);
  std::vector<poison::CodecCount> per_codec;
  if (r.mode == train::TrainMode::fc_backdoor)
    for (const auto& [tag, count] : r.poison.per_codec)
      if (count > 0) per_codec.push_back({codec::CompressionSpec::parse(tag), count});
  const auto plan = poison::build_plan(train_set, trig, r.poison.target_label, r.poison.n_normal, per_codec, s.poison);
  return poison::materialize(plan, train_set, trig);
}

inline eval::Fraction ir_fraction(const poison::PoisonedDataset& pd) {
  return {static_cast<std::int64_t>(pd.poisoned_count()), static_cast<std::int64_t>(pd.original_size)};
}

/// Provenance stamped on every artifact of a run.
inline nlohmann::json run_provenance(const ExperimentManifest& m, const ResolvedRun& r, const ReplicateSeeds& s) {
  return {{"manifest", m.name},
          {"manifest_hash", m.hash()},
          {"global_seed", m.seed},
          {"replicate_seed", s.replicate},
          {"run", r.name},
          {"mode", train::train_mode_name(r.mode)},
          {"arch", r.model.arch},
          {"codec_versions", codec::codec_versions()}};
}

}  // namespace crbd::experiment
