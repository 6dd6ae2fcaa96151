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
/// Poisoned training sets D_b = S_b ∪ S_bc: sampling a plan, materializing it
/// (stamp, then compress per pairing link) and persisting the result.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "crbd/codec/codec.hpp"
#include "crbd/codec/image_io.hpp"
#include "crbd/core/error.hpp"
#include "crbd/core/hash.hpp"
#include "crbd/core/rng.hpp"
#include "crbd/data/dataset.hpp"
#include "crbd/trigger/trigger.hpp"

namespace crbd::poison {

namespace fs = std::filesystem;
using codec::CompressionSpec;
using data::LabeledImages;

struct CodecCount {
  CompressionSpec spec;
  int count = 0;
  friend bool operator==(const CodecCount&, const CodecCount&) = default;
};

/// One compressed instance and the normal backdoor instance it came from.
/// `compressed_id` indexes S_bc, `backdoor_id` indexes S_b.
struct PairingLink {
  int backdoor_id = 0;
  int compressed_id = 0;
  CompressionSpec spec;
  friend bool operator==(const PairingLink&, const PairingLink&) = default;
};

struct PoisonPlan {
  std::vector<int> source_ids;  // dataset ids of S_b; position = backdoor id
  std::string trigger_hash;
  int target_label = 0;
  int n_normal = 0;
  std::vector<CodecCount> per_codec;
  std::vector<PairingLink> pairing;  // ordered by compressed id
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t compressed_total() const { return pairing.size(); }
  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(n_normal) + pairing.size(); }

  [[nodiscard]] std::size_t count_for(const CompressionSpec& s) const {
    return static_cast<std::size_t>(std::count_if(pairing.begin(), pairing.end(), [&](const auto& l) { return l.spec == s; }));
  }

  friend bool operator==(const PoisonPlan&, const PoisonPlan&) = default;
};

inline void to_json(nlohmann::json& j, const PoisonPlan& p) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : p.per_codec) per.push_back({{"spec", c.spec.tag()}, {"count", c.count}});
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : p.pairing) links.push_back({l.backdoor_id, l.compressed_id, l.spec.tag()});
  j = {{"source_ids", p.source_ids}, {"trigger_hash", p.trigger_hash}, {"target_label", p.target_label},
       {"n_normal", p.n_normal},     {"per_codec", per},                {"pairing", links},
       {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, PoisonPlan& p) {
  p.source_ids = j.at("source_ids").get<std::vector<int>>();
  p.trigger_hash = j.at("trigger_hash").get<std::string>();
  p.target_label = j.at("target_label").get<int>();
  p.n_normal = j.at("n_normal").get<int>();
  p.per_codec.clear();
  for (const auto& c : j.at("per_codec"))
    p.per_codec.push_back({CompressionSpec::parse(c.at("spec").get<std::string>()), c.at("count").get<int>()});
  p.pairing.clear();
  for (const auto& l : j.at("pairing"))
    p.pairing.push_back({l.at(0).get<int>(), l.at(1).get<int>(), CompressionSpec::parse(l.at(2).get<std::string>())});
  p.seed = j.at("seed").get<std::uint64_t>();
}

/// Samples S_b sources (never of class y_t) and, per codec, the subset of
/// S_b parents that receive a compressed copy. Deterministic in `seed`.
inline PoisonPlan build_plan(const LabeledImages& ds, const trigger::TriggerPattern& trig, int y_t, int n_normal,
                             const std::vector<CodecCount>& per_codec, std::uint64_t seed) {
  if (n_normal < 1) throw ParameterError("n_normal must be >= 1");
  if (y_t < 0 || y_t >= ds.num_classes)
    throw ParameterError("target label " + std::to_string(y_t) + " outside [0," + std::to_string(ds.num_classes) + ")");
  if (trig.dims() != ds.dims)
    throw ParameterError("trigger dims " + to_string(trig.dims()) + " differ from dataset dims " + to_string(ds.dims));
  std::set<CompressionSpec> seen;
  for (const auto& c : per_codec) {
    if (c.count < 0) throw ParameterError("negative compressed count for " + c.spec.tag());
    if (c.spec.codec() == codec::Codec::none) throw ParameterError("per-codec entries need a lossy codec");
    if (!seen.insert(c.spec).second) throw ParameterError("codec " + c.spec.tag() + " listed twice");
    if (c.count > n_normal)
      throw CapacityError(c.spec.tag() + " asks for " + std::to_string(c.count) + " compressed instances but only " +
                          std::to_string(n_normal) + " normal backdoor parents exist");
  }
  std::vector<int> candidates;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] != y_t) candidates.push_back(static_cast<int>(i));
  if (static_cast<std::size_t>(n_normal) > candidates.size())
    throw CapacityError("n_normal=" + std::to_string(n_normal) + " exceeds the " + std::to_string(candidates.size()) +
                        " images outside the target class");

  PoisonPlan plan;
  plan.trigger_hash = trig.hash();
  plan.target_label = y_t;
  plan.n_normal = n_normal;
  plan.per_codec = per_codec;
  plan.seed = seed;
  Rng src_rng(derive_seed(seed, "poison-sources"));
  src_rng.shuffle(std::span<int>(candidates));
  plan.source_ids.assign(candidates.begin(), candidates.begin() + n_normal);
  std::sort(plan.source_ids.begin(), plan.source_ids.end());

  int next_id = 0;
  for (const auto& c : per_codec) {
    std::vector<int> parents(static_cast<std::size_t>(n_normal));
    std::iota(parents.begin(), parents.end(), 0);
    Rng rng(derive_seed(seed, "poison-parents:" + c.spec.tag()));
    rng.shuffle(std::span<int>(parents));
    parents.resize(static_cast<std::size_t>(c.count));
    std::sort(parents.begin(), parents.end());
    for (int parent : parents) plan.pairing.push_back({parent, next_id++, c.spec});
  }
  return plan;
}

/// |D_b| / train_size.
inline double injection_rate(std::size_t poisoned, std::size_t train_size) {
  if (train_size == 0) throw ParameterError("train_size must be > 0");
  if (poisoned > train_size) throw ParameterError("more poisoned instances than training images");
  return static_cast<double>(poisoned) / static_cast<double>(train_size);
}

inline double injection_rate(const PoisonPlan& plan, std::size_t train_size) {
  return injection_rate(plan.size(), train_size);
}

struct PoisonedDataset {
  LabeledImages clean;         // original labels, S_b sources removed
  std::vector<int> clean_ids;  // dataset id of each clean image
  std::vector<Image> backdoor;    // S_b, indexed by backdoor id
  std::vector<Image> compressed;  // S_bc, indexed by compressed id
  PoisonPlan plan;
  std::size_t original_size = 0;
  nlohmann::json provenance = nlohmann::json::object();

  [[nodiscard]] int target_label() const { return plan.target_label; }
  [[nodiscard]] std::size_t poisoned_count() const { return backdoor.size() + compressed.size(); }
  [[nodiscard]] std::size_t train_size() const { return clean.size() + poisoned_count(); }
  [[nodiscard]] bool has_poison() const { return !backdoor.empty(); }

  /// Unpoisoned training set (clean-model baselines).
  static PoisonedDataset clean_only(const LabeledImages& ds) {
    PoisonedDataset out;
    out.clean = ds;
    out.clean_ids.resize(ds.size());
    std::iota(out.clean_ids.begin(), out.clean_ids.end(), 0);
    out.original_size = ds.size();
    out.provenance = {{"dataset", ds.name}, {"dataset_hash", ds.hash()}};
    return out;
  }

  /// Compressed ids that use `spec`.
  [[nodiscard]] std::vector<int> compressed_ids_for(const CompressionSpec& spec) const {
    std::vector<int> out;
    for (const auto& l : plan.pairing)
      if (l.spec == spec) out.push_back(l.compressed_id);
    return out;
  }
};

/// Stamps the plan's sources (rounded onto the 16-bit grid so the persisted
/// 16-bit PNGs are exact), compresses each linked parent with its spec, and
/// assembles the clean remainder.
inline PoisonedDataset materialize(const PoisonPlan& plan, const LabeledImages& ds, const trigger::TriggerPattern& trig) {
  if (trig.hash() != plan.trigger_hash) throw ContractError("plan was built for a different trigger");
  PoisonedDataset out;
  out.plan = plan;
  out.original_size = ds.size();
  std::vector<char> used(ds.size(), 0);
  out.backdoor.reserve(plan.source_ids.size());
  for (std::size_t b = 0; b < plan.source_ids.size(); ++b) {
    const int id = plan.source_ids[b];
    if (id < 0 || static_cast<std::size_t>(id) >= ds.size())
      throw ContractError("plan source id " + std::to_string(id) + " outside the dataset");
    if (ds.labels[static_cast<std::size_t>(id)] == plan.target_label)
      throw ContractError("plan source id " + std::to_string(id) + " belongs to the target class");
    used[static_cast<std::size_t>(id)] = 1;
    try {
      Image x = trigger::stamp(ds.images[static_cast<std::size_t>(id)], trig);
      for (auto& v : x.pixels()) v = from_u16(to_u16(v));
      out.backdoor.push_back(std::move(x));
    } catch (const Error& e) {
      throw Error("stamping source " + std::to_string(id) + ": " + e.what());
    }
  }
  out.compressed.resize(plan.pairing.size());
  for (const auto& l : plan.pairing) {
    if (l.backdoor_id < 0 || l.backdoor_id >= static_cast<int>(out.backdoor.size()) || l.compressed_id < 0 ||
        l.compressed_id >= static_cast<int>(out.compressed.size()))
      throw ContractError("pairing link references a missing instance");
    try {
      out.compressed[static_cast<std::size_t>(l.compressed_id)] =
          codec::compress(out.backdoor[static_cast<std::size_t>(l.backdoor_id)], l.spec);
    } catch (const CodecError& e) {
      throw CodecError("compressing backdoor instance " + std::to_string(l.backdoor_id) + " with " + l.spec.tag() +
                       ": " + e.what());
    }
  }
  out.clean = LabeledImages{ds.name + "-clean", ds.dims, ds.num_classes, ds.class_names, {}, {}};
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!used[i]) {
      out.clean.push(ds.images[i], ds.labels[i]);
      out.clean_ids.push_back(static_cast<int>(i));
    }
  out.provenance = {{"dataset", ds.name},
                    {"dataset_hash", ds.hash()},
                    {"trigger_hash", plan.trigger_hash},
                    {"seed", plan.seed},
                    {"codec_versions", codec::codec_versions()}};
  return out;
}

namespace detail {
inline std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}
}  // namespace detail

/// Directory layout: clean/NNNNNN.png (8-bit), poison/normal/NNNNNN.png
/// (16-bit), poison/<spec-tag>/NNNNNN.png (8-bit, named by compressed id),
/// manifest.json with labels, plan, pairing and provenance.
inline void save_poisoned(const PoisonedDataset& pd, const fs::path& dir) {
  fs::create_directories(dir / "clean");
  fs::create_directories(dir / "poison" / "normal");
  for (std::size_t i = 0; i < pd.clean.size(); ++i) codec::write_png(dir / "clean" / detail::index_name(i), pd.clean.images[i]);
  for (std::size_t i = 0; i < pd.backdoor.size(); ++i)
    codec::write_png(dir / "poison" / "normal" / detail::index_name(i), pd.backdoor[i], true);
  for (const auto& l : pd.plan.pairing)
    codec::write_png(dir / "poison" / l.spec.tag() / detail::index_name(static_cast<std::size_t>(l.compressed_id)),
                     pd.compressed[static_cast<std::size_t>(l.compressed_id)]);
  nlohmann::json m;
  m["dataset"] = {{"name", pd.clean.name},
                  {"dims", {pd.clean.dims.channels, pd.clean.dims.height, pd.clean.dims.width}},
                  {"num_classes", pd.clean.num_classes},
                  {"class_names", pd.clean.class_names}};
  m["clean_ids"] = pd.clean_ids;
  m["clean_labels"] = pd.clean.labels;
  m["original_size"] = pd.original_size;
  m["plan"] = pd.plan;
  m["provenance"] = pd.provenance;
  std::ofstream(dir / "manifest.json") << m.dump(1) << "\n";
}

inline PoisonedDataset load_poisoned(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  const auto m = nlohmann::json::parse(in);
  PoisonedDataset pd;
  const auto& d = m.at("dataset");
  const auto dims = d.at("dims").get<std::vector<int>>();
  pd.clean.name = d.at("name").get<std::string>();
  pd.clean.dims = ImageDims{dims.at(0), dims.at(1), dims.at(2)};
  pd.clean.num_classes = d.at("num_classes").get<int>();
  pd.clean.class_names = d.at("class_names").get<std::vector<std::string>>();
  pd.clean_ids = m.at("clean_ids").get<std::vector<int>>();
  const auto labels = m.at("clean_labels").get<std::vector<int>>();
  pd.original_size = m.at("original_size").get<std::size_t>();
  pd.plan = m.at("plan").get<PoisonPlan>();
  pd.provenance = m.at("provenance");
  for (std::size_t i = 0; i < labels.size(); ++i) pd.clean.push(codec::read_image(dir / "clean" / detail::index_name(i)), labels[i]);
  for (int b = 0; b < pd.plan.n_normal; ++b)
    pd.backdoor.push_back(codec::read_image(dir / "poison" / "normal" / detail::index_name(static_cast<std::size_t>(b))));
  pd.compressed.resize(pd.plan.pairing.size());
  for (const auto& l : pd.plan.pairing)
    pd.compressed[static_cast<std::size_t>(l.compressed_id)] =
        codec::read_image(dir / "poison" / l.spec.tag() / detail::index_name(static_cast<std::size_t>(l.compressed_id)));
  pd.clean.validate();
  return pd;
}

}  // namespace crbd::poison
