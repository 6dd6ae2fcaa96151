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

// crbd: command-line front end.
//
//   crbd validate MANIFEST
//   crbd run MANIFEST | --resume DIR      [manifest flags]
//   crbd poison -m MANIFEST --out DIR     [--run R] [--replicate S]
//   crbd train  -m MANIFEST --run R --out DIR [--poisoned DIR]
//   crbd eval   --checkpoint C [--codec jpeg --quality 50]
//   crbd sweep  --checkpoint C --axis jpeg-quality --grid 10:90:10
//   crbd report RESULTS... --style table1 [--force]
//   crbd layers --arch resnet18
//
// Exit codes: 0 success, 2 validation/configuration error, 3 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "crbd/eval/plots.hpp"
#include "crbd/experiment/overrides.hpp"
#include "crbd/experiment/pipeline.hpp"
#include "crbd/experiment/report.hpp"
#include "crbd/experiment/runner.hpp"

namespace {

using namespace crbd;
using namespace crbd::experiment;
namespace fs = std::filesystem;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

/// Flags that mirror manifest fields.
struct ManifestFlags {
  std::optional<int> epochs, batch_size, target, n_normal;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> arch, dataset, data_root;
  std::optional<std::size_t> train_subset, test_subset;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "train.epochs");
    app->add_option("--batch-size", batch_size, "train.batch_size");
    app->add_option("--target", target, "poison.target_label");
    app->add_option("--n-normal", n_normal, "poison.n_normal");
    app->add_option("--alpha", alpha, "fc.alpha");
    app->add_option("--seed", seed, "global seed");
    app->add_option("--arch", arch, "model.arch");
    app->add_option("--dataset", dataset, "dataset.name");
    app->add_option("--data-root", data_root, "dataset.root");
    app->add_option("--train-subset", train_subset, "dataset.train_subset");
    app->add_option("--test-subset", test_subset, "dataset.test_subset");
    app->add_option("--set", sets, "override any manifest field: dotted.path=value (repeatable)");
  }

  [[nodiscard]] std::vector<FlagOverride> overrides() const {
    std::vector<FlagOverride> o;
    if (epochs) o.push_back({"--epochs", "train.epochs", *epochs});
    if (batch_size) o.push_back({"--batch-size", "train.batch_size", *batch_size});
    if (target) o.push_back({"--target", "poison.target_label", *target});
    if (n_normal) o.push_back({"--n-normal", "poison.n_normal", *n_normal});
    if (alpha) o.push_back({"--alpha", "fc.alpha", *alpha});
    if (seed) o.push_back({"--seed", "seed", *seed});
    if (arch) o.push_back({"--arch", "model.arch", *arch});
    if (dataset) o.push_back({"--dataset", "dataset.name", *dataset});
    if (data_root) o.push_back({"--data-root", "dataset.root", *data_root});
    if (train_subset) o.push_back({"--train-subset", "dataset.train_subset", *train_subset});
    if (test_subset) o.push_back({"--test-subset", "dataset.test_subset", *test_subset});
    for (const auto& s : sets) o.push_back(parse_set_flag(s));
    return o;
  }

  [[nodiscard]] ExperimentManifest apply(const ExperimentManifest& m) const {
    std::vector<std::string> warnings;
    auto out = apply_overrides(m, overrides(), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return out;
  }
};

std::string fraction_text(const eval::Fraction& f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f (%lld/%lld)", f.value(), static_cast<long long>(f.num),
                static_cast<long long>(f.den));
  return buf;
}

/// Manifest, trigger and target label behind a checkpoint written by `run`
/// or `train`, with optional explicit replacements.
struct CheckpointContext {
  ExperimentManifest manifest;
  trigger::TriggerPattern trig;
  int target = 0;
};

CheckpointContext checkpoint_context(const fs::path& ckpt, const std::string& manifest_path,
                                     const std::string& trigger_dir, const ManifestFlags& flags) {
  const auto header = nn::read_checkpoint_header(ckpt);
  const auto& meta = header.at("meta");
  CheckpointContext c;
  if (!manifest_path.empty()) {
    c.manifest = ExperimentManifest::load(manifest_path);
  } else if (meta.contains("manifest_json")) {
    c.manifest = ExperimentManifest::from_json(meta.at("manifest_json"));
    c.manifest.base_dir = meta.value("manifest_dir", "");
  } else {
    throw ConfigError("checkpoint " + ckpt.string() + " records no manifest; pass --manifest");
  }
  c.manifest = flags.apply(c.manifest);
  fs::path tdir = trigger_dir;
  if (tdir.empty() && meta.contains("trigger_dir") && fs::exists(fs::path(meta.at("trigger_dir").get<std::string>()) / "trigger.json"))
    tdir = meta.at("trigger_dir").get<std::string>();
  c.trig = tdir.empty() ? build_trigger(c.manifest) : trigger::load_trigger(tdir);
  if (meta.contains("trigger_hash") && meta.at("trigger_hash") != c.trig.hash())
    std::cerr << "warning: trigger hash " << c.trig.hash() << " differs from the one used in training ("
              << meta.at("trigger_hash").get<std::string>() << ")\n";
  c.target = c.manifest.poison.target_label;
  if (meta.contains("run")) {
    for (const auto& r : c.manifest.runs)
      if (r.name == meta.at("run")) c.target = resolve_run(c.manifest, r).poison.target_label;
  }
  return c;
}

int cmd_validate(const std::string& path) {
  const auto m = ExperimentManifest::load(path);
  std::cout << "OK " << m.name << " hash " << m.hash() << " (" << m.runs.size() << " runs, " << m.seeds.size()
            << " seeds, " << m.evaluation.size() << " evaluations)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crbd: compression-resistant backdoor experiments"};
  app.require_subcommand(1);
  ManifestFlags flags;

  std::string manifest, out, run_name, resume, output_dir, checkpoint, trigger_dir, poisoned, codec_name, axis,
      grid = "10:90:10", style = "table1", arch_name;
  std::optional<int> quality;
  std::uint64_t replicate = 0;
  std::vector<std::string> specs, results;
  bool force = false;
  int num_classes = 10;

  auto* validate = app.add_subcommand("validate", "check a manifest and print its hash");
  validate->add_option("manifest", manifest, "manifest file")->required();

  auto* run = app.add_subcommand("run", "execute a manifest (prepare, poison, train, evaluate)");
  run->add_option("manifest", manifest, "manifest file");
  run->add_option("--resume", resume, "continue an existing results directory");
  run->add_option("--output-dir", output_dir, "override output_dir");
  flags.add(run);

  auto* poison_cmd = app.add_subcommand("poison", "build and persist the poisoned training set of a run");
  poison_cmd->add_option("-m,--manifest", manifest, "manifest file")->required();
  poison_cmd->add_option("--run", run_name, "run whose poison settings to use (default: first run)");
  poison_cmd->add_option("--replicate", replicate, "replicate seed");
  poison_cmd->add_option("--out", out, "output directory")->required();
  flags.add(poison_cmd);

  auto* train_cmd = app.add_subcommand("train", "train one run of a manifest");
  train_cmd->add_option("-m,--manifest", manifest, "manifest file")->required();
  train_cmd->add_option("--run", run_name, "run name")->required();
  train_cmd->add_option("--replicate", replicate, "replicate seed");
  train_cmd->add_option("--poisoned", poisoned, "use a dataset written by `poison`");
  train_cmd->add_option("--trigger", trigger_dir, "trigger directory (default: build from manifest)");
  train_cmd->add_option("--out", out, "output directory")->required();
  flags.add(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (TA/ASR/ASR_bc, or one codec)");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("-m,--manifest", manifest, "manifest (default: recorded in the checkpoint)");
  eval_cmd->add_option("--trigger", trigger_dir, "trigger directory (default: recorded in the checkpoint)");
  eval_cmd->add_option("--codec", codec_name, "single codec: jpeg, jpeg2000, webp");
  eval_cmd->add_option("--quality", quality, "quality (jpeg/webp) or quality layers (jpeg2000)");
  eval_cmd->add_option("--specs", specs, "codec specs for a full report (default jpeg-q50 jpeg2000-l30 webp-q50)")
      ->delimiter(',');
  eval_cmd->add_option("--out", out, "output JSON (default: next to the checkpoint)");
  flags.add(eval_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "ASR over a grid of codec quality levels");
  sweep_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  sweep_cmd->add_option("-m,--manifest", manifest, "manifest (default: recorded in the checkpoint)");
  sweep_cmd->add_option("--trigger", trigger_dir, "trigger directory");
  sweep_cmd->add_option("--axis", axis, "jpeg-quality, webp-quality or jpeg2000-layers")->required();
  sweep_cmd->add_option("--grid", grid, "lo:hi:step");
  sweep_cmd->add_option("--out", out, "output stem (default: next to the checkpoint)");
  flags.add(sweep_cmd);

  auto* report_cmd = app.add_subcommand("report", "render results directories into tables and plots");
  report_cmd->add_option("results", results, "results directories")->required();
  report_cmd->add_option("--style", style, "table style (table1)");
  report_cmd->add_option("--out", out, "output directory (default: first results directory)");
  report_cmd->add_flag("--force", force, "merge results with mismatched codec versions");

  auto* layers_cmd = app.add_subcommand("layers", "list the feature layers of an architecture");
  layers_cmd->add_option("--arch", arch_name, "resnet18, vgg16, smallcnn or a .json spec")->required();
  layers_cmd->add_option("--num-classes", num_classes, "classifier width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*validate) return cmd_validate(manifest);

    if (*run) {
      RunnerOptions opt;
      opt.output_dir = output_dir;
      ExperimentManifest m;
      if (!resume.empty()) {
        opt.resume = resume;
        m = manifest_of_results(resume);
        if (!manifest.empty() && ExperimentManifest::load(manifest).hash() != m.hash())
          throw ConfigError("manifest " + manifest + " differs from the one recorded in " + resume);
        if (!flags.overrides().empty())
          throw ConfigError("flags cannot change a run being resumed; start a new run instead");
      } else {
        if (manifest.empty()) throw ConfigError("run needs a manifest or --resume DIR");
        m = flags.apply(ExperimentManifest::load(manifest));
      }
      const auto dir = run_manifest(m, opt);
      std::cout << dir.string() << "\n";
      return 0;
    }

    if (*poison_cmd) {
      const auto m = flags.apply(ExperimentManifest::load(manifest));
      const auto& spec = run_name.empty() ? m.runs.front() : m.run(run_name);
      const auto r = resolve_run(m, spec);
      const auto seeds = replicate_seeds(m, r.poison, replicate);
      const auto data = prepare_dataset(m);
      const auto trig = build_trigger(m);
      const auto pd = poison_for_run(r, seeds, data.train, trig);
      poison::save_poisoned(pd, out);
      trigger::save_trigger(trig, fs::path(out) / "trigger");
      std::cout << "run " << r.name << ": " << pd.clean.size() << " clean, " << pd.backdoor.size() << " backdoor, "
                << pd.compressed.size() << " compressed; IR " << fraction_text(ir_fraction(pd)) << "\n";
      return 0;
    }

    if (*train_cmd) {
      const auto m = flags.apply(ExperimentManifest::load(manifest));
      const auto r = resolve_run(m, m.run(run_name));
      const auto seeds = replicate_seeds(m, r.poison, replicate);
      std::optional<data::DatasetSplits> data;
      const auto trig = !trigger_dir.empty() ? trigger::load_trigger(trigger_dir)
                        : !poisoned.empty() && fs::exists(fs::path(poisoned) / "trigger" / "trigger.json")
                            ? trigger::load_trigger(fs::path(poisoned) / "trigger")
                            : build_trigger(m);
      poison::PoisonedDataset pd;
      if (!poisoned.empty()) {
        pd = poison::load_poisoned(poisoned);
      } else {
        data = prepare_dataset(m);
        pd = poison_for_run(r, seeds, data->train, trig);
      }
      auto model = make_run_model(m, r, seeds, pd.clean.num_classes);
      auto tc = train_config(r, seeds);
      const auto fc = fc_config(r, model);
      tc.checkpoint_dir = tc.checkpoint_every > 0 ? fs::path(out) / "checkpoints" : fs::path{};
      const auto hist = train::train(model, pd, tc, fc, [](const train::EpochRecord& e) {
        std::fprintf(stderr, "epoch %d lr %.4g loss %.4f (clean %.4f backdoor %.4f fc %.4f) %.1fs\n", e.epoch + 1,
                     e.lr, e.loss_total, e.loss_clean, e.loss_backdoor, e.loss_fc, e.wall_seconds);
      });
      fs::create_directories(out);
      trigger::save_trigger(trig, fs::path(out) / "trigger");
      hist.write_csv(fs::path(out) / "history.csv");
      auto meta = run_provenance(m, r, seeds);
      meta["manifest_json"] = m.to_json();
      meta["manifest_dir"] = fs::absolute(m.base_dir).string();
      meta["trigger_dir"] = fs::absolute(fs::path(out) / "trigger").string();
      meta["trigger_hash"] = trig.hash();
      meta["train"] = train::to_json_value(tc);
      meta["fc"] = train::to_json_value(fc);
      meta["ir"] = ir_fraction(pd);
      nn::save_checkpoint(model, fs::path(out) / "model.ckpt", meta);
      std::cout << (fs::path(out) / "model.ckpt").string() << "\n";
      return 0;
    }

    if (*eval_cmd) {
      auto ctx = checkpoint_context(checkpoint, manifest, trigger_dir, flags);
      auto model = nn::load_checkpoint<float>(checkpoint);
      const auto data = prepare_dataset(ctx.manifest);
      const fs::path ckdir = fs::path(checkpoint).parent_path();
      if (!codec_name.empty()) {
        const auto c = codec::parse_codec(codec_name);
        const auto spec = quality ? codec::CompressionSpec::with_level(c, *quality) : codec::CompressionSpec::defaults(c);
        const auto f = eval::attack_success_rate(model, data.test, ctx.trig, ctx.target, spec);
        eval::MetricsReport r;
        if (c == codec::Codec::none) r.asr = f;
        else r.asr_bc[spec.tag()] = f;
        r.checkpoint_id = model.checksum();
        r.codec_versions = codec::codec_versions();
        r.provenance = {{"checkpoint", fs::absolute(checkpoint).string()},
                        {"manifest_hash", ctx.manifest.hash()},
                        {"global_seed", ctx.manifest.seed},
                        {"trigger_hash", ctx.trig.hash()},
                        {"target_label", ctx.target}};
        const fs::path dest = out.empty() ? ckdir / ("eval-" + spec.tag() + ".json") : fs::path(out);
        write_json(dest, r);
        std::cout << (c == codec::Codec::none ? "ASR" : "ASR_" + spec.tag()) << " = " << fraction_text(f) << "\n";
        return 0;
      }
      const auto tags = specs.empty() ? EvalSpec{}.specs : specs;
      auto r = eval::evaluate(model, data.test, ctx.trig, ctx.target, parse_specs(tags));
      r.provenance["manifest_hash"] = ctx.manifest.hash();
      r.provenance["global_seed"] = ctx.manifest.seed;
      const auto header = nn::read_checkpoint_header(checkpoint);
      if (header.at("meta").contains("ir")) r.ir = header.at("meta").at("ir").get<eval::Fraction>();
      write_json(out.empty() ? ckdir / "eval.json" : fs::path(out), r);
      std::cout << "TA  = " << fraction_text(*r.ta) << "\nASR = " << fraction_text(*r.asr) << "\n";
      for (const auto& [k, f] : r.asr_bc) std::cout << "ASR_" << k << " = " << fraction_text(f) << "\n";
      return 0;
    }

    if (*sweep_cmd) {
      codec::Codec c;
      if (axis == "jpeg-quality") c = codec::Codec::jpeg;
      else if (axis == "webp-quality") c = codec::Codec::webp;
      else if (axis == "jpeg2000-layers") c = codec::Codec::jpeg2000;
      else
        throw ConfigError("sweep --axis must be jpeg-quality, webp-quality or jpeg2000-layers (injection-rate and "
                          "train-codec sweeps train models; declare them in a manifest)");
      auto ctx = checkpoint_context(checkpoint, manifest, trigger_dir, flags);
      auto model = nn::load_checkpoint<float>(checkpoint);
      const auto data = prepare_dataset(ctx.manifest);
      const auto sw = eval::quality_sweep(model, data.test, ctx.trig, ctx.target, c, parse_grid(grid));
      const fs::path stem = out.empty() ? fs::path(checkpoint).parent_path() / ("sweep-" + axis) : fs::path(out);
      write_sweep(sw, stem, axis + " sweep",
                  {{"checkpoint", fs::absolute(checkpoint).string()},
                   {"manifest_hash", ctx.manifest.hash()},
                   {"global_seed", ctx.manifest.seed},
                   {"trigger_hash", ctx.trig.hash()},
                   {"codec_versions", codec::codec_versions()}});
      for (const auto& p : sw.points)
        std::cout << axis << " " << p.label << ": ASR_bc = " << fraction_text(p.report.asr_bc.begin()->second) << "\n";
      std::cout << sw.points.size() << " points -> " << stem.string() << ".json\n";
      return 0;
    }

    if (*report_cmd) {
      std::vector<fs::path> dirs(results.begin(), results.end());
      const fs::path dest = out.empty() ? dirs.front() / "report" : fs::path(out);
      const auto written = write_report(dirs, dest, style, force);
      std::cout << table1_report(dirs, force).to_markdown();
      for (const auto& w : written) std::cerr << "wrote " << w.string() << "\n";
      return 0;
    }

    if (*layers_cmd) {
      auto model = nn::build_model<float>(arch_name, num_classes, 0);
      std::printf("%-4s %-14s %-10s %-16s %10s %12s\n", "pos", "name", "type", "output", "features", "params");
      for (const auto& d : model.list_feature_layers()) {
        std::string shape;
        for (std::size_t i = 0; i < d.output_shape.size(); ++i)
          shape += (i ? "x" : "") + std::to_string(d.output_shape[i]);
        std::printf("%-4d %-14s %-10s %-16s %10zu %12zu\n", d.position, d.name.c_str(), d.type.c_str(), shape.c_str(),
                    static_cast<std::size_t>(d.feature_dim), static_cast<std::size_t>(d.param_count));
      }
      std::printf("default selector: %s\n", nlohmann::json(model.default_selector()).dump().c_str());
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DatasetUnavailable& e) {
    std::cerr << "dataset unavailable: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
