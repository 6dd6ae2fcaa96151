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
/// Declarative experiment manifests (JSON). Parsing is strict: unknown fields
/// are rejected and every offending field is reported at once. Serializing
/// writes every field, so parse -> serialize -> parse is the identity and the
/// canonical serialization is what gets hashed.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crbd/codec/codec.hpp"
#include "crbd/core/error.hpp"
#include "crbd/core/hash.hpp"
#include "crbd/nn/model.hpp"
#include "crbd/train/schedule.hpp"
#include "crbd/train/trainer.hpp"

namespace crbd::experiment {

using nlohmann::json;

/// Raised with every validation problem found in a manifest.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : ConfigError(join(problems)), problems_(std::move(problems)) {}
  [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "manifest validation failed:";
    for (const auto& e : p) s += "\n  - " + e;
    return s;
  }
  std::vector<std::string> problems_;
};

namespace detail {

/// Reads the fields of one JSON object, recording type errors and, on
/// finish(), any keys that were never read.
class Fields {
 public:
  Fields(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) {
      errors_.push_back(where("") + "must be an object");
      ok_ = false;
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!ok_ || !j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const std::exception&) {
      errors_.push_back(where(key) + "has the wrong type");
    }
  }

  template <class T>
  void require(const char* key, T& out) {
    if (ok_ && !j_.contains(key)) {
      errors_.push_back(where(key) + "is required");
      return;
    }
    get(key, out);
  }

  /// Returns the sub-object (or null json when absent) and marks it used.
  const json* sub(const char* key) {
    if (!ok_ || !j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  void finish() {
    if (!ok_) return;
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) errors_.push_back(where(k) + "is not a recognized field");
  }

  [[nodiscard]] std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void error(const std::string& key, const std::string& msg) { errors_.push_back(where(key) + msg); }

 private:
  [[nodiscard]] std::string where(const std::string& key) const {
    const std::string p = key.empty() ? path_ : child(key);
    return (p.empty() ? "manifest" : p) + ": ";
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> used_;
  bool ok_ = true;
};

}  // namespace detail

struct DatasetSpec {
  std::string name = "synthetic";  // cifar10 | synthetic | folder
  std::string root;                // empty = $CRBD_DATA_ROOT (cifar10) / required (folder)
  std::size_t train_subset = 0;    // 0 = full training split
  std::size_t test_subset = 0;     // 0 = full test split
  std::size_t synthetic_train = 5000;
  std::size_t synthetic_test = 1000;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;  // folder datasets: class subset
  std::vector<int> image_size{3, 32, 32};
  bool fetch = true;  // cifar10: download when missing
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct TrojanSpec {
  std::string source_run = "clean";  // clean run whose model is reverse-engineered
  std::string layer = "fc1";
  std::vector<int> neurons{0};
  std::vector<int> region{24, 24, 8, 8};  // x, y, width, height
  int steps = 200;
  double step_size = 0.05;
  double target_value = 10.0;
  friend bool operator==(const TrojanSpec&, const TrojanSpec&) = default;
};

struct TriggerSpec {
  std::string kind = "gaussian";  // gaussian | logo | trojan | fixed-asset
  double std = 0.5;
  double blend = 0.1;
  std::uint64_t seed = 7;
  std::string asset;  // logo / fixed-asset image path (relative to the manifest)
  std::string mask;   // fixed-asset optional mask path
  std::string text = "TEST";  // logo rendered from text when no asset is given
  int text_height = 8;
  std::vector<int> position{0, 0};
  double scale = 1.0;
  TrojanSpec trojan;
  friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;
};

struct PoisonSpec {
  int target_label = 5;
  int n_normal = 1000;
  std::vector<std::pair<std::string, int>> per_codec;  // spec tag -> count, in order
  std::uint64_t seed = 0;
  friend bool operator==(const PoisonSpec&, const PoisonSpec&) = default;
};

struct ModelSpec {
  std::string arch = "smallcnn";
  std::string pretrained;  // optional checkpoint to start from
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct TrainSpec {
  int epochs = 100;
  train::LrSchedule schedule;
  int schedule_epochs = 100;  // epoch budget the schedule is written for; rescaled to `epochs`
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool augment = true;
  int checkpoint_every = 0;
  friend bool operator==(const TrainSpec&, const TrainSpec&) = default;
};

struct FcSpec {
  double alpha = 0.1;
  std::optional<nn::LayerSelector> selector;  // empty = architecture default
  friend bool operator==(const FcSpec&, const FcSpec&) = default;
};

/// A training run; `overrides` patches the shared poison/train/fc/model blocks.
struct RunSpec {
  std::string name;
  std::string mode = "fc-backdoor";
  json overrides = json::object();
  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct EvalSpec {
  std::string type;                // metrics | quality-sweep | generalization | injection-rate
  std::string name;                // output stem
  std::vector<std::string> runs;   // metrics: runs to evaluate; generalization: one per train codec
  std::vector<std::string> labels; // generalization: train-codec labels aligned with runs
  std::vector<std::string> specs{"jpeg-q50", "jpeg2000-l30", "webp-q50"};
  std::string codec = "jpeg";       // quality-sweep
  std::string grid = "10:90:10";    // quality-sweep levels lo:hi:step
  std::string run;                  // quality-sweep / injection-rate base run
  std::vector<int> compressed_counts;  // injection-rate
  friend bool operator==(const EvalSpec&, const EvalSpec&) = default;
};

struct ExperimentManifest {
  std::string name;
  std::string description;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "results";
  DatasetSpec dataset;
  TriggerSpec trigger;
  PoisonSpec poison;
  ModelSpec model;
  TrainSpec train;
  FcSpec fc;
  std::vector<RunSpec> runs;
  std::vector<EvalSpec> evaluation;
  std::filesystem::path base_dir;  // directory of the manifest file (not serialized)

  friend bool operator==(const ExperimentManifest& a, const ExperimentManifest& b) {
    return a.to_json() == b.to_json();
  }

  [[nodiscard]] json to_json() const;
  static ExperimentManifest from_json(const json& j);
  static ExperimentManifest load(const std::filesystem::path& path);

  [[nodiscard]] std::string canonical() const { return to_json().dump(); }
  [[nodiscard]] std::string hash() const { return hash_hex(canonical()); }

  [[nodiscard]] const RunSpec& run(const std::string& n) const {
    for (const auto& r : runs)
      if (r.name == n) return r;
    throw ConfigError("manifest has no run named '" + n + "'");
  }

  /// Resolves a manifest-relative path.
  [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
};

/// Parses "lo:hi:step" into the inclusive arithmetic grid.
inline std::vector<int> parse_grid(const std::string& g) {
  int lo = 0, hi = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream is(g);
  if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !is.eof())
    throw ConfigError("grid '" + g + "' must look like lo:hi:step");
  if (step <= 0 || hi < lo) throw ConfigError("grid '" + g + "' needs step > 0 and hi >= lo");
  std::vector<int> out;
  for (int v = lo; v <= hi; v += step) out.push_back(v);
  return out;
}

namespace detail {

inline json per_codec_json(const std::vector<std::pair<std::string, int>>& pc) {
  json out = json::array();
  for (const auto& [k, v] : pc) out.push_back({{"spec", k}, {"count", v}});
  return out;
}

inline void read_dataset(const json& j, DatasetSpec& d, std::vector<std::string>& errs) {
  Fields f(j, "dataset", errs);
  f.get("name", d.name);
  f.get("root", d.root);
  f.get("train_subset", d.train_subset);
  f.get("test_subset", d.test_subset);
  f.get("synthetic_train", d.synthetic_train);
  f.get("synthetic_test", d.synthetic_test);
  f.get("seed", d.seed);
  f.get("classes", d.classes);
  f.get("image_size", d.image_size);
  f.get("fetch", d.fetch);
  f.finish();
  if (d.name != "cifar10" && d.name != "synthetic" && d.name != "folder")
    f.error("name", "must be cifar10, synthetic or folder");
  if (d.image_size.size() != 3 || d.image_size[0] < 1 || d.image_size[1] < 1 || d.image_size[2] < 1)
    f.error("image_size", "must be [channels, height, width] with positive entries");
  if (d.name == "folder" && d.root.empty()) f.error("root", "is required for folder datasets");
}

inline void read_trigger(const json& j, TriggerSpec& t, std::vector<std::string>& errs) {
  Fields f(j, "trigger", errs);
  f.get("kind", t.kind);
  f.get("std", t.std);
  f.get("blend", t.blend);
  f.get("seed", t.seed);
  f.get("asset", t.asset);
  f.get("mask", t.mask);
  f.get("text", t.text);
  f.get("text_height", t.text_height);
  f.get("position", t.position);
  f.get("scale", t.scale);
  if (const json* tj = f.sub("trojan")) {
    Fields g(*tj, "trigger.trojan", errs);
    g.get("source_run", t.trojan.source_run);
    g.get("layer", t.trojan.layer);
    g.get("neurons", t.trojan.neurons);
    g.get("region", t.trojan.region);
    g.get("steps", t.trojan.steps);
    g.get("step_size", t.trojan.step_size);
    g.get("target_value", t.trojan.target_value);
    g.finish();
    if (t.trojan.region.size() != 4) g.error("region", "must be [x, y, width, height]");
    if (t.trojan.steps < 1) g.error("steps", "must be >= 1");
  }
  f.finish();
  if (t.kind != "gaussian" && t.kind != "logo" && t.kind != "trojan" && t.kind != "fixed-asset")
    f.error("kind", "must be gaussian, logo, trojan or fixed-asset");
  if (!(t.blend >= 0.0 && t.blend <= 1.0)) f.error("blend", "must be in [0,1]");
  if (!(t.std >= 0.0)) f.error("std", "must be >= 0");
  if (t.position.size() != 2) f.error("position", "must be [x, y]");
  if (!(t.scale > 0.0)) f.error("scale", "must be > 0");
  if (t.kind == "fixed-asset" && t.asset.empty()) f.error("asset", "is required for fixed-asset triggers");
}

inline void read_poison(const json& j, PoisonSpec& p, std::vector<std::string>& errs, const std::string& path) {
  Fields f(j, path, errs);
  f.get("target_label", p.target_label);
  f.get("n_normal", p.n_normal);
  f.get("seed", p.seed);
  if (const json* pc = f.sub("per_codec")) {
    p.per_codec.clear();
    if (!pc->is_array()) {
      f.error("per_codec", "must be a list of {spec, count}");
    } else {
      for (std::size_t i = 0; i < pc->size(); ++i) {
        Fields g((*pc)[i], f.child("per_codec[" + std::to_string(i) + "]"), errs);
        std::string spec;
        int count = 0;
        g.require("spec", spec);
        g.require("count", count);
        g.finish();
        try {
          if (!spec.empty()) (void)codec::CompressionSpec::parse(spec);
        } catch (const Error& e) {
          g.error("spec", e.what());
        }
        if (count < 0) g.error("count", "must be >= 0");
        p.per_codec.emplace_back(spec, count);
      }
    }
  }
  f.finish();
  if (p.n_normal < 1) f.error("n_normal", "must be >= 1");
  if (p.target_label < 0) f.error("target_label", "must be >= 0");
}

inline void read_model(const json& j, ModelSpec& m, std::vector<std::string>& errs, const std::string& path) {
  Fields f(j, path, errs);
  f.get("arch", m.arch);
  f.get("pretrained", m.pretrained);
  f.finish();
}

inline void read_train(const json& j, TrainSpec& t, std::vector<std::string>& errs, const std::string& path) {
  Fields f(j, path, errs);
  f.get("epochs", t.epochs);
  f.get("schedule", t.schedule);
  f.get("schedule_epochs", t.schedule_epochs);
  f.get("batch_size", t.batch_size);
  f.get("momentum", t.momentum);
  f.get("weight_decay", t.weight_decay);
  f.get("augment", t.augment);
  f.get("checkpoint_every", t.checkpoint_every);
  f.finish();
  if (t.epochs < 1) f.error("epochs", "must be >= 1");
  if (t.schedule_epochs < 1) f.error("schedule_epochs", "must be >= 1");
  if (t.batch_size < 2) f.error("batch_size", "must be >= 2");
  try {
    t.schedule.validate();
  } catch (const Error& e) {
    f.error("schedule", e.what());
  }
}

inline void read_fc(const json& j, FcSpec& c, std::vector<std::string>& errs, const std::string& path) {
  Fields f(j, path, errs);
  f.get("alpha", c.alpha);
  if (const json* s = f.sub("selector")) {
    if (s->is_null()) {
      c.selector.reset();
    } else {
      try {
        c.selector = s->get<nn::LayerSelector>();
        c.selector->validate();
      } catch (const std::exception& e) {
        f.error("selector", e.what());
      }
    }
  }
  f.finish();
  if (!(c.alpha >= 0.0)) f.error("alpha", "must be >= 0");
}

inline json selector_json(const std::optional<nn::LayerSelector>& s) { return s ? json(*s) : json(nullptr); }

}  // namespace detail

inline json ExperimentManifest::to_json() const {
  json runs_j = json::array();
  for (const auto& r : runs) runs_j.push_back({{"name", r.name}, {"mode", r.mode}, {"overrides", r.overrides}});
  json evals = json::array();
  for (const auto& e : evaluation)
    evals.push_back({{"type", e.type}, {"name", e.name}, {"runs", e.runs}, {"labels", e.labels}, {"specs", e.specs},
                     {"codec", e.codec}, {"grid", e.grid}, {"run", e.run}, {"compressed_counts", e.compressed_counts}});
  return {
      {"name", name},
      {"description", description},
      {"seed", seed},
      {"seeds", seeds},
      {"output_dir", output_dir},
      {"dataset",
       {{"name", dataset.name}, {"root", dataset.root}, {"train_subset", dataset.train_subset},
        {"test_subset", dataset.test_subset}, {"synthetic_train", dataset.synthetic_train},
        {"synthetic_test", dataset.synthetic_test}, {"seed", dataset.seed}, {"classes", dataset.classes},
        {"image_size", dataset.image_size}, {"fetch", dataset.fetch}}},
      {"trigger",
       {{"kind", trigger.kind}, {"std", trigger.std}, {"blend", trigger.blend}, {"seed", trigger.seed},
        {"asset", trigger.asset}, {"mask", trigger.mask}, {"text", trigger.text}, {"text_height", trigger.text_height},
        {"position", trigger.position}, {"scale", trigger.scale},
        {"trojan",
         {{"source_run", trigger.trojan.source_run}, {"layer", trigger.trojan.layer}, {"neurons", trigger.trojan.neurons},
          {"region", trigger.trojan.region}, {"steps", trigger.trojan.steps}, {"step_size", trigger.trojan.step_size},
          {"target_value", trigger.trojan.target_value}}}}},
      {"poison",
       {{"target_label", poison.target_label}, {"n_normal", poison.n_normal},
        {"per_codec", detail::per_codec_json(poison.per_codec)}, {"seed", poison.seed}}},
      {"model", {{"arch", model.arch}, {"pretrained", model.pretrained}}},
      {"train",
       {{"epochs", train.epochs}, {"schedule", train.schedule}, {"schedule_epochs", train.schedule_epochs},
        {"batch_size", train.batch_size}, {"momentum", train.momentum}, {"weight_decay", train.weight_decay},
        {"augment", train.augment}, {"checkpoint_every", train.checkpoint_every}}},
      {"fc", {{"alpha", fc.alpha}, {"selector", detail::selector_json(fc.selector)}}},
      {"runs", runs_j},
      {"evaluation", evals},
  };
}

inline ExperimentManifest ExperimentManifest::from_json(const json& j) {
  std::vector<std::string> errs;
  ExperimentManifest m;
  detail::Fields f(j, "", errs);
  f.require("name", m.name);
  f.get("description", m.description);
  f.get("seed", m.seed);
  f.get("seeds", m.seeds);
  f.get("output_dir", m.output_dir);
  if (const json* d = f.sub("dataset")) detail::read_dataset(*d, m.dataset, errs);
  if (const json* t = f.sub("trigger")) detail::read_trigger(*t, m.trigger, errs);
  if (const json* p = f.sub("poison")) detail::read_poison(*p, m.poison, errs, "poison");
  if (const json* mo = f.sub("model")) detail::read_model(*mo, m.model, errs, "model");
  if (const json* t = f.sub("train")) detail::read_train(*t, m.train, errs, "train");
  if (const json* c = f.sub("fc")) detail::read_fc(*c, m.fc, errs, "fc");
  std::set<std::string> run_names;
  if (const json* rs = f.sub("runs")) {
    if (!rs->is_array()) {
      f.error("runs", "must be a list");
    } else {
      for (std::size_t i = 0; i < rs->size(); ++i) {
        const std::string path = "runs[" + std::to_string(i) + "]";
        detail::Fields g((*rs)[i], path, errs);
        RunSpec r;
        g.require("name", r.name);
        g.get("mode", r.mode);
        if (const json* o = g.sub("overrides")) {
          r.overrides = *o;
          detail::Fields h(*o, path + ".overrides", errs);
          // Validate each override block against its schema on a scratch copy.
          if (const json* p = h.sub("poison")) {
            PoisonSpec tmp = m.poison;
            detail::read_poison(*p, tmp, errs, path + ".overrides.poison");
          }
          if (const json* t = h.sub("train")) {
            TrainSpec tmp = m.train;
            detail::read_train(*t, tmp, errs, path + ".overrides.train");
          }
          if (const json* c = h.sub("fc")) {
            FcSpec tmp = m.fc;
            detail::read_fc(*c, tmp, errs, path + ".overrides.fc");
          }
          if (const json* mo = h.sub("model")) {
            ModelSpec tmp = m.model;
            detail::read_model(*mo, tmp, errs, path + ".overrides.model");
          }
          h.finish();
        }
        g.finish();
        try {
          (void)train::parse_train_mode(r.mode);
        } catch (const Error&) {
          g.error("mode", "must be clean, common-backdoor or fc-backdoor");
        }
        if (!r.name.empty() && !run_names.insert(r.name).second) g.error("name", "duplicates another run");
        m.runs.push_back(std::move(r));
      }
    }
  }
  if (const json* es = f.sub("evaluation")) {
    if (!es->is_array()) {
      f.error("evaluation", "must be a list");
    } else {
      for (std::size_t i = 0; i < es->size(); ++i) {
        const std::string path = "evaluation[" + std::to_string(i) + "]";
        detail::Fields g((*es)[i], path, errs);
        EvalSpec e;
        g.require("type", e.type);
        g.get("name", e.name);
        g.get("runs", e.runs);
        g.get("labels", e.labels);
        g.get("specs", e.specs);
        g.get("codec", e.codec);
        g.get("grid", e.grid);
        g.get("run", e.run);
        g.get("compressed_counts", e.compressed_counts);
        g.finish();
        if (e.name.empty()) e.name = e.type + "-" + std::to_string(i);
        if (e.type != "metrics" && e.type != "quality-sweep" && e.type != "generalization" && e.type != "injection-rate")
          g.error("type", "must be metrics, quality-sweep, generalization or injection-rate");
        for (const auto& s : e.specs) {
          try {
            (void)codec::CompressionSpec::parse(s);
          } catch (const Error& ex) {
            g.error("specs", ex.what());
          }
        }
        auto known = [&](const std::string& r, const std::string& field) {
          if (!run_names.contains(r)) g.error(field, "refers to unknown run '" + r + "'");
        };
        for (const auto& r : e.runs) known(r, "runs");
        if (e.type == "quality-sweep" || e.type == "injection-rate") {
          if (e.run.empty()) g.error("run", "is required");
          else known(e.run, "run");
        }
        if (e.type == "quality-sweep") {
          try {
            (void)parse_grid(e.grid);
            (void)codec::parse_codec(e.codec);
          } catch (const Error& ex) {
            g.error("grid", ex.what());
          }
        }
        if (e.type == "generalization" && e.labels.size() != e.runs.size())
          g.error("labels", "must have one train-codec label per run");
        if (e.type == "injection-rate") {
          if (e.compressed_counts.empty()) g.error("compressed_counts", "must not be empty");
          for (std::size_t k = 1; k < e.compressed_counts.size(); ++k)
            if (e.compressed_counts[k] <= e.compressed_counts[k - 1])
              g.error("compressed_counts", "must be strictly increasing");
        }
        m.evaluation.push_back(std::move(e));
      }
    }
  }
  f.finish();
  if (m.seeds.empty()) f.error("seeds", "must list at least one seed");
  if (m.runs.empty()) f.error("runs", "must list at least one run");
  if (!errs.empty()) throw ValidationError(errs);
  return m;
}

inline ExperimentManifest ExperimentManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError({path.string() + ": " + e.what()});
  }
  auto m = from_json(j);
  m.base_dir = std::filesystem::absolute(path).parent_path();
  return m;
}

/// Effective (shared blocks + run overrides) configuration of one run.
struct ResolvedRun {
  std::string name;
  train::TrainMode mode = train::TrainMode::fc_backdoor;
  PoisonSpec poison;
  ModelSpec model;
  TrainSpec train;
  FcSpec fc;
};

inline ResolvedRun resolve_run(const ExperimentManifest& m, const RunSpec& r) {
  std::vector<std::string> errs;
  ResolvedRun out{r.name, train::parse_train_mode(r.mode), m.poison, m.model, m.train, m.fc};
  const std::string base = "runs[" + r.name + "].overrides";
  if (r.overrides.contains("poison")) detail::read_poison(r.overrides.at("poison"), out.poison, errs, base + ".poison");
  if (r.overrides.contains("model")) detail::read_model(r.overrides.at("model"), out.model, errs, base + ".model");
  if (r.overrides.contains("train")) detail::read_train(r.overrides.at("train"), out.train, errs, base + ".train");
  if (r.overrides.contains("fc")) detail::read_fc(r.overrides.at("fc"), out.fc, errs, base + ".fc");
  if (!errs.empty()) throw ValidationError(errs);
  return out;
}

}  // namespace crbd::experiment
