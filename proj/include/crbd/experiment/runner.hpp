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
/// Manifest runner: prepare -> trigger -> poison -> train -> evaluate, with a
/// timestamped results directory, a per-output-directory lockfile, and a
/// state file that lets a failed or interrupted run resume.

#pragma once

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "crbd/eval/metrics.hpp"
#include "crbd/eval/plots.hpp"
#include "crbd/eval/studies.hpp"
#include "crbd/experiment/manifest.hpp"
#include "crbd/experiment/pipeline.hpp"

namespace crbd::experiment {

/// Timestamped line logger that mirrors to a file and an optional stream.
class RunLog {
 public:
  RunLog() = default;
  RunLog(const fs::path& file, std::ostream* console) : file_(file, std::ios::app), console_(console) {}

  void operator()(const std::string& msg) {
    const std::string line = "[" + now_iso() + "] " + msg;
    if (file_) file_ << line << "\n" << std::flush;
    if (console_) *console_ << line << "\n" << std::flush;
  }

  static std::string now_iso() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

 private:
  std::ofstream file_;
  std::ostream* console_ = nullptr;
};

/// Exclusive lock on an output directory. A lock left by a dead process is
/// taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".crbd.lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        (void)!::write(fd, pid.data(), pid.size());
        ::close(fd);
        held_ = true;
        return;
      }
      long owner = 0;
      std::ifstream(path_) >> owner;
      if (owner > 0 && ::kill(static_cast<pid_t>(owner), 0) == 0)
        throw Error("output directory " + dir.string() + " is locked by running process " + std::to_string(owner));
      fs::remove(path_);  // stale
    }
    throw Error("cannot acquire lock " + path_.string());
  }
  ~DirectoryLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

/// Completed stages of a results directory, persisted after every stage.
class RunState {
 public:
  RunState() = default;
  explicit RunState(fs::path path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      j_ = nlohmann::json::parse(in);
    } else {
      j_ = {{"status", "new"}, {"completed", nlohmann::json::object()}};
    }
  }

  [[nodiscard]] bool done(const std::string& stage) const { return j_.at("completed").contains(stage); }
  void mark(const std::string& stage) {
    j_["completed"][stage] = RunLog::now_iso();
    save();
  }
  void set(const std::string& key, const nlohmann::json& v) {
    j_[key] = v;
    save();
  }
  [[nodiscard]] const nlohmann::json& json() const { return j_; }

 private:
  void save() const {
    const fs::path tmp = path_.string() + ".tmp";
    std::ofstream(tmp) << j_.dump(1) << "\n";
    fs::rename(tmp, path_);
  }
  fs::path path_;
  nlohmann::json j_;
};

struct RunnerOptions {
  fs::path output_dir;           // overrides manifest.output_dir when set
  fs::path resume;               // continue this results directory
  std::ostream* console = &std::cerr;
};

inline std::string results_stamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

/// Sums numerators and denominators of reports over replicates.
inline eval::MetricsReport pool_reports(const std::vector<eval::MetricsReport>& rs) {
  eval::MetricsReport out;
  if (rs.empty()) return out;
  auto add = [](std::optional<eval::Fraction>& acc, const std::optional<eval::Fraction>& f) {
    if (!f) return;
    if (!acc) acc = eval::Fraction{};
    acc->num += f->num;
    acc->den += f->den;
  };
  for (const auto& r : rs) {
    add(out.ta, r.ta);
    add(out.ir, r.ir);
    add(out.asr, r.asr);
    for (const auto& [k, f] : r.asr_bc) {
      out.asr_bc[k].num += f.num;
      out.asr_bc[k].den += f.den;
    }
  }
  out.codec_versions = rs.front().codec_versions;
  out.checkpoint_id = "pooled";
  out.provenance = {{"pooled_replicates", rs.size()}};
  return out;
}

inline eval::SweepResult pool_sweeps(const std::vector<eval::SweepResult>& ss) {
  if (ss.empty()) throw ParameterError("nothing to pool");
  eval::SweepResult out;
  out.axis = ss.front().axis;
  for (std::size_t i = 0; i < ss.front().points.size(); ++i) {
    std::vector<eval::MetricsReport> rs;
    for (const auto& s : ss) {
      if (s.points.size() != ss.front().points.size() || s.points[i].label != ss.front().points[i].label)
        throw ContractError("sweeps being pooled differ in their points");
      rs.push_back(s.points[i].report);
    }
    double value = 0.0;
    for (const auto& s : ss) value += s.points[i].value;
    out.points.push_back({ss.front().points[i].label, value / static_cast<double>(ss.size()), pool_reports(rs)});
  }
  return out;
}

inline void write_sweep(const eval::SweepResult& s, const fs::path& stem, const std::string& title,
                        const nlohmann::json& provenance) {
  write_json(stem.string() + ".json", {{"sweep", s}, {"provenance", provenance}});
  std::ofstream(stem.string() + ".csv") << s.to_csv();
  eval::plot_sweep(s, stem.string() + ".png", title);
}

class ManifestRunner {
 public:
  ManifestRunner(ExperimentManifest m, RunnerOptions opt) : m_(std::move(m)), opt_(std::move(opt)) {}

  /// Executes every stage not yet completed and returns the results directory.
  fs::path run() {
    open_results_dir();
    DirectoryLock lock(lock_dir_);
    log_ = std::make_unique<RunLog>(dir_ / "run.log", opt_.console);
    state_ = RunState(dir_ / "state.json");
    state_.set("status", "running");
    state_.set("manifest_hash", m_.hash());
    state_.set("base_dir", manifest_dir().string());
    state_.set("updated", RunLog::now_iso());
    (*log_)("results directory " + dir_.string() + " (manifest " + m_.name + ", hash " + m_.hash() + ")");
    try {
      execute();
    } catch (const std::exception& e) {
      state_.set("status", "failed");
      state_.set("error", e.what());
      (*log_)(std::string("FAILED: ") + e.what() + " -- resume with: crbd run --resume " + dir_.string());
      throw;
    }
    state_.set("status", "complete");
    (*log_)("complete");
    return dir_;
  }

 private:
  // ---- directory management ------------------------------------------------

  /// Directory manifest-relative paths resolve against; the working directory
  /// for manifests built in memory.
  fs::path manifest_dir() const { return m_.base_dir.empty() ? fs::current_path() : fs::absolute(m_.base_dir); }

  void open_results_dir() {
    if (!opt_.resume.empty()) {
      dir_ = opt_.resume;
      const auto saved = read_json(dir_ / "manifest.json");
      auto stored = ExperimentManifest::from_json(saved.at("manifest"));
      if (stored.hash() != m_.hash())
        throw ConfigError("manifest differs from the one recorded in " + dir_.string() + " (hash " + stored.hash() +
                          " vs " + m_.hash() + ")");
      lock_dir_ = dir_.parent_path();
      return;
    }
    const fs::path root = opt_.output_dir.empty() ? m_.resolve(m_.output_dir) : opt_.output_dir;
    lock_dir_ = root;
    fs::create_directories(root);
    const std::string base = m_.name + "-" + results_stamp();
    dir_ = root / base;
    for (int k = 1; fs::exists(dir_); ++k) dir_ = root / (base + "-" + std::to_string(k));
    fs::create_directories(dir_);
    write_json(dir_ / "manifest.json", {{"manifest", m_.to_json()}, {"manifest_hash", m_.hash()}});
  }

  fs::path run_dir(const std::string& run, std::uint64_t seed) const {
    return dir_ / "runs" / run / ("seed-" + std::to_string(seed));
  }

  // ---- stages -----------------------------------------------------------

  void execute() {
    (*log_)("prepare: dataset " + m_.dataset.name);
    data_ = prepare_dataset(m_);
    (*log_)("prepare: " + std::to_string(data_.train.size()) + " train / " + std::to_string(data_.test.size()) +
            " test images");
    make_trigger();
    for (std::uint64_t s : m_.seeds)
      for (const auto& r : m_.runs) {
        train_run(r.name, s);
        evaluate_run(r.name, s);
      }
    for (const auto& e : m_.evaluation) run_evaluation(e);
    write_summary();
  }

  void make_trigger() {
    const fs::path tdir = dir_ / "trigger";
    if (state_.done("trigger") && fs::exists(tdir / "trigger.json")) {
      trig_ = trigger::load_trigger(tdir);
      return;
    }
    std::function<Model<float>&()> clean;
    if (m_.trigger.kind == "trojan") {
      const auto& src = m_.run(m_.trigger.trojan.source_run);
      if (src.mode != "clean") throw ConfigError("trojan source run '" + src.name + "' must be a clean run");
      clean = [this, &src]() -> Model<float>& {
        train_run(src.name, m_.seeds.front());
        return model(src.name, m_.seeds.front());
      };
    }
    trig_ = build_trigger(m_, clean);
    trigger::save_trigger(trig_, tdir);
    state_.mark("trigger");
    (*log_)("trigger: " + m_.trigger.kind + " hash " + trig_.hash());
  }

  Model<float>& model(const std::string& run, std::uint64_t seed) {
    const std::string key = run + "/" + std::to_string(seed);
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    return models_.emplace(key, nn::load_checkpoint<float>(run_dir(run, seed) / "model.ckpt")).first->second;
  }

  void train_run(const std::string& name, std::uint64_t seed) {
    const std::string stage = "train/" + name + "/seed-" + std::to_string(seed);
    const fs::path rdir = run_dir(name, seed);
    if (state_.done(stage) && fs::exists(rdir / "model.ckpt")) return;
    const auto r = resolve_run(m_, m_.run(name));
    const auto seeds = replicate_seeds(m_, r.poison, seed);
    const auto pd = poison_for_run(r, seeds, data_.train, trig_);
    write_json(rdir / "plan.json", {{"plan", pd.plan}, {"provenance", pd.provenance}});
    Model<float> mdl = make_run_model(m_, r, seeds, data_.train.num_classes);
    auto tc = train_config(r, seeds);
    tc.checkpoint_dir = tc.checkpoint_every > 0 ? rdir / "checkpoints" : fs::path{};
    const auto fc = fc_config(r, mdl);
    (*log_)(stage + ": " + train::train_mode_name(r.mode) + " " + mdl.arch_id() + ", " + std::to_string(tc.epochs) +
            " epochs, " + std::to_string(pd.clean.size()) + " clean + " + std::to_string(pd.poisoned_count()) +
            " poisoned");
    const auto hist = train::train(mdl, pd, tc, fc, [&](const train::EpochRecord& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s: epoch %d lr %.4g loss %.4f (clean %.4f backdoor %.4f fc %.4f) %.1fs",
                    stage.c_str(), e.epoch + 1, e.lr, e.loss_total, e.loss_clean, e.loss_backdoor, e.loss_fc,
                    e.wall_seconds);
      (*log_)(buf);
    });
    hist.write_csv(rdir / "history.csv");
    nlohmann::json meta = run_provenance(m_, r, seeds);
    meta["manifest_json"] = m_.to_json();
    meta["manifest_dir"] = manifest_dir().string();
    meta["trigger_dir"] = fs::absolute(dir_ / "trigger").string();
    meta["trigger_hash"] = trig_.hash();
    meta["train"] = train::to_json_value(tc);
    meta["fc"] = train::to_json_value(fc);
    meta["ir"] = ir_fraction(pd);
    nn::save_checkpoint(mdl, rdir / "model.ckpt", meta);
    models_.insert_or_assign(name + "/" + std::to_string(seed), std::move(mdl));
    state_.mark(stage);
  }

  std::vector<std::string> metric_specs(const std::string& run) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& e : m_.evaluation) {
      if (e.type != "metrics") continue;
      if (!e.runs.empty() && std::find(e.runs.begin(), e.runs.end(), run) == e.runs.end()) continue;
      for (const auto& s : e.specs)
        if (seen.insert(s).second) out.push_back(s);
    }
    if (out.empty()) out = EvalSpec{}.specs;
    return out;
  }

  void evaluate_run(const std::string& name, std::uint64_t seed) {
    const std::string stage = "metrics/" + name + "/seed-" + std::to_string(seed);
    const fs::path rdir = run_dir(name, seed);
    if (state_.done(stage) && fs::exists(rdir / "metrics.json")) return;
    const auto r = resolve_run(m_, m_.run(name));
    const auto seeds = replicate_seeds(m_, r.poison, seed);
    const auto header = nn::read_checkpoint_header(rdir / "model.ckpt");
    const auto ir = header.at("meta").at("ir").get<eval::Fraction>();
    eval::PredictionDump dump;
    auto rep = eval::evaluate(model(name, seed), data_.test, trig_, r.poison.target_label,
                              parse_specs(metric_specs(name)), ir, &dump);
    const auto prov = run_provenance(m_, r, seeds);
    for (const auto& [k, v] : prov.items()) rep.provenance[k] = v;
    write_json(rdir / "metrics.json", rep);
    write_json(rdir / "predictions.json",
               {{"test_labels", data_.test.labels}, {"clean", dump.clean}, {"backdoor", dump.backdoor},
                {"target_label", r.poison.target_label}});
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s: TA %.4f ASR %.4f min ASR_bc %.4f", stage.c_str(), rep.ta->value(),
                  rep.asr->value(), rep.min_asr_bc());
    (*log_)(buf);
    state_.mark(stage);
  }

  nlohmann::json eval_provenance(const EvalSpec& e, std::uint64_t seed) const {
    return {{"manifest", m_.name},      {"manifest_hash", m_.hash()}, {"global_seed", m_.seed},
            {"replicate_seed", seed},   {"evaluation", e.name},       {"type", e.type},
            {"trigger_hash", trig_.hash()}, {"codec_versions", codec::codec_versions()}};
  }

  void run_evaluation(const EvalSpec& e) {
    const fs::path edir = dir_ / "evaluations" / e.name;
    if (e.type == "metrics") {
      metrics_table(e, edir);
      return;
    }
    std::vector<eval::SweepResult> per_seed;
    for (std::uint64_t s : m_.seeds) {
      const std::string stage = "eval/" + e.name + "/seed-" + std::to_string(s);
      const fs::path stem = edir / ("seed-" + std::to_string(s));
      if (state_.done(stage) && fs::exists(stem.string() + ".json")) {
        per_seed.push_back(read_json(stem.string() + ".json").at("sweep").get<eval::SweepResult>());
        continue;
      }
      eval::SweepResult sw;
      if (e.type == "quality-sweep") {
        const auto r = resolve_run(m_, m_.run(e.run));
        sw = eval::quality_sweep(model(e.run, s), data_.test, trig_, r.poison.target_label, codec::parse_codec(e.codec),
                                 parse_grid(e.grid));
      } else if (e.type == "generalization") {
        std::vector<std::pair<std::string, Model<float>*>> models;
        for (std::size_t i = 0; i < e.runs.size(); ++i) models.emplace_back(e.labels[i], &model(e.runs[i], s));
        const auto r = resolve_run(m_, m_.run(e.runs.front()));
        sw = eval::generalization_matrix(models, data_.test, trig_, r.poison.target_label, parse_specs(e.specs));
      } else {
        sw = injection_rate(e, s, edir / ("seed-" + std::to_string(s) + "-points"));
      }
      write_sweep(sw, stem, e.name + " (seed " + std::to_string(s) + ")", eval_provenance(e, s));
      (*log_)(stage + ": " + std::to_string(sw.points.size()) + " points");
      per_seed.push_back(std::move(sw));
      state_.mark(stage);
    }
    auto prov = eval_provenance(e, m_.seeds.front());
    prov.erase("replicate_seed");
    prov["replicate_seeds"] = m_.seeds;
    write_sweep(pool_sweeps(per_seed), edir / "pooled", e.name + " (pooled over seeds)", prov);
  }

  eval::SweepResult injection_rate(const EvalSpec& e, std::uint64_t seed, const fs::path& points_dir) {
    const auto r = resolve_run(m_, m_.run(e.run));
    const auto seeds = replicate_seeds(m_, r.poison, seed);
    eval::InjectionRateStudyConfig cfg;
    cfg.n_normal = r.poison.n_normal;
    for (const auto& [tag, count] : r.poison.per_codec) cfg.codecs.push_back(codec::CompressionSpec::parse(tag));
    cfg.compressed_counts = e.compressed_counts;
    cfg.eval_specs = parse_specs(e.specs);
    cfg.train = train_config(r, seeds);
    cfg.plan_seed = seeds.poison;
    cfg.persist_dir = points_dir;
    auto probe = make_run_model(m_, r, seeds, data_.train.num_classes);
    cfg.fc = fc_config(r, probe);
    return eval::injection_rate_study<float>(
        data_.train, data_.test, trig_, r.poison.target_label, cfg,
        [&] { return make_run_model(m_, r, seeds, data_.train.num_classes); },
        [&](const eval::SweepPoint& p) {
          (*log_)("injection-rate " + e.name + " seed " + std::to_string(seed) + ": count " + p.label + " IR " +
                  std::to_string(p.value) + " min ASR_bc " + std::to_string(p.report.min_asr_bc()));
        });
  }

  void metrics_table(const EvalSpec& e, const fs::path& edir) {
    fs::create_directories(edir);
    std::ofstream out(edir / "table.csv");
    out << "run,replicate,metric,num,den,fraction\n";
    out.precision(10);
    const auto runs = e.runs.empty() ? [&] {
      std::vector<std::string> v;
      for (const auto& r : m_.runs) v.push_back(r.name);
      return v;
    }() : e.runs;
    for (const auto& run : runs) {
      std::vector<eval::MetricsReport> reps;
      for (std::uint64_t s : m_.seeds) reps.push_back(read_json(run_dir(run, s) / "metrics.json").get<eval::MetricsReport>());
      auto row = [&](const std::string& rep, const eval::MetricsReport& r) {
        auto line = [&](const std::string& metric, const eval::Fraction& f) {
          out << run << ',' << rep << ',' << metric << ',' << f.num << ',' << f.den << ',' << f.value() << '\n';
        };
        if (r.ta) line("TA", *r.ta);
        if (r.ir) line("IR", *r.ir);
        if (r.asr) line("ASR", *r.asr);
        for (const auto& [k, f] : r.asr_bc) line("ASR_bc:" + k, f);
      };
      for (std::size_t i = 0; i < reps.size(); ++i) row(std::to_string(m_.seeds[i]), reps[i]);
      row("pooled", pool_reports(reps));
    }
  }

  void write_summary() {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : m_.runs) {
      const auto rr = resolve_run(m_, r);
      nlohmann::json reports = nlohmann::json::object();
      std::vector<eval::MetricsReport> reps;
      for (std::uint64_t s : m_.seeds) {
        reps.push_back(read_json(run_dir(r.name, s) / "metrics.json").get<eval::MetricsReport>());
        reports[std::to_string(s)] = reps.back();
      }
      runs.push_back({{"name", r.name},
                      {"mode", r.mode},
                      {"arch", rr.model.arch},
                      {"target_label", rr.poison.target_label},
                      {"reports", reports},
                      {"pooled", pool_reports(reps)}});
    }
    nlohmann::json evals = nlohmann::json::array();
    for (const auto& e : m_.evaluation) {
      nlohmann::json ej = {{"name", e.name}, {"type", e.type}};
      const fs::path pooled = dir_ / "evaluations" / e.name / "pooled.json";
      if (fs::exists(pooled)) ej["pooled"] = read_json(pooled).at("sweep");
      evals.push_back(ej);
    }
    write_json(dir_ / "summary.json",
               {{"manifest", m_.name},
                {"manifest_hash", m_.hash()},
                {"global_seed", m_.seed},
                {"seeds", m_.seeds},
                {"codec_versions", codec::codec_versions()},
                {"dataset",
                 {{"name", m_.dataset.name},
                  {"train", data_.train.name},
                  {"train_size", data_.train.size()},
                  {"test", data_.test.name},
                  {"test_size", data_.test.size()}}},
                {"trigger",
                 {{"kind", m_.trigger.kind},
                  {"hash", trig_.hash()},
                  {"blend", trig_.blend},
                  {"params", trig_.params}}},
                {"runs", runs},
                {"evaluations", evals}});
  }

  ExperimentManifest m_;
  RunnerOptions opt_;
  fs::path dir_, lock_dir_;
  std::unique_ptr<RunLog> log_;
  RunState state_;
  data::DatasetSplits data_;
  trigger::TriggerPattern trig_;
  std::map<std::string, Model<float>> models_;
};

/// Runs (or resumes) a manifest and returns its results directory.
inline fs::path run_manifest(const ExperimentManifest& m, const RunnerOptions& opt = {}) {
  return ManifestRunner(m, opt).run();
}

inline fs::path run_manifest(const fs::path& manifest_path, const RunnerOptions& opt = {}) {
  return run_manifest(ExperimentManifest::load(manifest_path), opt);
}

/// Loads the manifest recorded in a results directory (for --resume).
inline ExperimentManifest manifest_of_results(const fs::path& results_dir) {
  auto m = ExperimentManifest::from_json(read_json(results_dir / "manifest.json").at("manifest"));
  const fs::path state = results_dir / "state.json";
  if (fs::exists(state)) m.base_dir = read_json(state).value("base_dir", "");
  return m;
}

/// Every MetricsReport / SweepResult artifact of a results directory, keyed
/// by relative path (used to compare two runs of one manifest).
inline std::map<std::string, nlohmann::json> collect_reports(const fs::path& results_dir) {
  std::map<std::string, nlohmann::json> out;
  for (const auto& e : fs::recursive_directory_iterator(results_dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    const auto rel = fs::relative(e.path(), results_dir).generic_string();
    const auto name = e.path().filename().string();
    if (name == "metrics.json" || rel.starts_with("evaluations/") || name == "summary.json") out[rel] = read_json(e.path());
  }
  return out;
}

}  // namespace crbd::experiment
