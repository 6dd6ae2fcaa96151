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

#include <gtest/gtest.h>

#include <sstream>

#include "crbd/experiment/overrides.hpp"
#include "crbd/experiment/report.hpp"
#include "support/fixtures.hpp"

namespace crbd {
namespace {

using experiment::ExperimentManifest;
using nlohmann::json;

json tiny_manifest_json() {
  return json::parse(R"({
    "name": "tiny",
    "seeds": [0],
    "dataset": {"name": "synthetic", "synthetic_train": 200, "synthetic_test": 60, "image_size": [3, 16, 16]},
    "trigger": {"kind": "gaussian", "std": 0.5, "blend": 0.2, "seed": 7},
    "poison": {"target_label": 5, "n_normal": 10,
               "per_codec": [{"spec": "jpeg-q50", "count": 10}, {"spec": "webp-q50", "count": 10}]},
    "train": {"epochs": 1, "batch_size": 50, "schedule": [[0, 0.05]], "schedule_epochs": 1},
    "fc": {"alpha": 0.1},
    "runs": [
      {"name": "common", "mode": "common-backdoor", "overrides": {"poison": {"n_normal": 30, "per_codec": []}}},
      {"name": "fc", "mode": "fc-backdoor", "overrides": {"train": {"batch_size": 40}}}
    ],
    "evaluation": [
      {"type": "metrics", "name": "table", "specs": ["jpeg-q50", "webp-q50"]},
      {"type": "quality-sweep", "name": "sweep", "run": "fc", "codec": "jpeg", "grid": "10:90:40"}
    ]
  })");
}

TEST(Manifest, JsonRoundTripIsStable) {
  const auto m = ExperimentManifest::from_json(tiny_manifest_json());
  const auto back = ExperimentManifest::from_json(m.to_json());
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.hash(), m.hash());
  EXPECT_EQ(m.run("fc").mode, "fc-backdoor");
  EXPECT_THROW((void)m.run("nope"), ConfigError);
  const auto r = experiment::resolve_run(m, m.run("common"));
  EXPECT_EQ(r.poison.n_normal, 30);
  EXPECT_TRUE(r.poison.per_codec.empty());
  EXPECT_EQ(experiment::resolve_run(m, m.run("fc")).train.batch_size, 40);
}

TEST(Manifest, ReportsEveryProblemAtOnce) {
  auto j = tiny_manifest_json();
  j["bogus"] = 1;
  j["train"]["epochs"] = "many";
  j["runs"][1]["mode"] = "sneaky";
  j["evaluation"][1]["run"] = "missing";
  j["evaluation"][0]["specs"] = {"gif-q3"};
  try {
    (void)ExperimentManifest::from_json(j);
    FAIL() << "expected a validation error";
  } catch (const experiment::ValidationError& e) {
    const auto& p = e.problems();
    ASSERT_GE(p.size(), 5u) << e.what();
    auto has = [&](const std::string& s) {
      return std::any_of(p.begin(), p.end(), [&](const std::string& x) { return x.find(s) != std::string::npos; });
    };
    EXPECT_TRUE(has("bogus"));
    EXPECT_TRUE(has("train.epochs"));
    EXPECT_TRUE(has("runs[1].mode"));
    EXPECT_TRUE(has("unknown run 'missing'"));
    EXPECT_TRUE(has("evaluation[0].specs"));
  }
}

TEST(Manifest, MissingRequiredFields) {
  EXPECT_THROW(ExperimentManifest::from_json(json::object()), experiment::ValidationError);
  auto j = tiny_manifest_json();
  j["runs"] = json::array();
  EXPECT_THROW(ExperimentManifest::from_json(j), experiment::ValidationError);
}

TEST(Manifest, EveryBundledManifestValidates) {
  const auto dir = std::filesystem::path(CRBD_SOURCE_DIR) / "manifests";
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    ++n;
    EXPECT_NO_THROW({
      const auto m = ExperimentManifest::load(e.path());
      EXPECT_EQ(m.name + ".json", e.path().filename().string());
    }) << e.path();
  }
  EXPECT_GE(n, 10);
}

TEST(Grid, ParsesInclusiveRanges) {
  EXPECT_EQ(experiment::parse_grid("10:90:10"), (std::vector<int>{10, 20, 30, 40, 50, 60, 70, 80, 90}));
  EXPECT_EQ(experiment::parse_grid("5:5:1"), (std::vector<int>{5}));
  EXPECT_THROW(experiment::parse_grid("10:90"), ConfigError);
  EXPECT_THROW(experiment::parse_grid("90:10:10"), ConfigError);
  EXPECT_THROW(experiment::parse_grid("10:90:0"), ConfigError);
  EXPECT_THROW(experiment::parse_grid("a:b:c"), ConfigError);
}

TEST(Overrides, FlagsWinAndWarn) {
  const auto m = ExperimentManifest::from_json(tiny_manifest_json());
  std::vector<std::string> warnings;
  const auto o = experiment::apply_overrides(
      m, {{"--epochs", "train.epochs", 4}, experiment::parse_set_flag("train.batch_size=16")}, &warnings);
  EXPECT_EQ(o.train.epochs, 4);
  EXPECT_EQ(o.train.batch_size, 16);
  // The flag also replaces the per-run batch size override.
  EXPECT_EQ(experiment::resolve_run(o, o.run("fc")).train.batch_size, 16);
  EXPECT_EQ(warnings.size(), 3u);
  EXPECT_NE(m.hash(), o.hash());
  // Setting a value equal to the manifest's is silent.
  warnings.clear();
  (void)experiment::apply_overrides(m, {{"--epochs", "train.epochs", 1}}, &warnings);
  EXPECT_TRUE(warnings.empty());
  EXPECT_THROW(experiment::apply_overrides(m, {{"--x", "nope.field", 1}}), experiment::ValidationError);
  EXPECT_THROW(experiment::apply_overrides(m, {{"--epochs", "train.epochs", "x"}}), experiment::ValidationError);
}

TEST(Overrides, SetFlagParsing) {
  const auto a = experiment::parse_set_flag("fc.alpha=0.5");
  EXPECT_EQ(a.path, "fc.alpha");
  EXPECT_EQ(a.value, 0.5);
  EXPECT_EQ(experiment::parse_set_flag("model.arch=vgg16").value, "vgg16");
  EXPECT_THROW(experiment::parse_set_flag("novalue"), ConfigError);
  EXPECT_THROW(experiment::parse_set_flag("=3"), ConfigError);
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testing::scratch_dir("tiny-run");
    std::ostringstream quiet;
    const auto m = ExperimentManifest::from_json(tiny_manifest_json());
    first_ = experiment::run_manifest(m, {root_, {}, &quiet});
    second_ = experiment::run_manifest(m, {root_, {}, &quiet});
  }
  static inline std::filesystem::path root_, first_, second_;
};

TEST_F(TinyRun, WritesTheResultsLayout) {
  EXPECT_NE(first_, second_);
  for (const char* f : {"manifest.json", "state.json", "run.log", "summary.json", "trigger/trigger.json"})
    EXPECT_TRUE(std::filesystem::exists(first_ / f)) << f;
  for (const char* run : {"common", "fc"})
    for (const char* f : {"plan.json", "history.csv", "model.ckpt", "metrics.json", "predictions.json"})
      EXPECT_TRUE(std::filesystem::exists(first_ / "runs" / run / "seed-0" / f)) << run << "/" << f;
  EXPECT_EQ(experiment::read_json(first_ / "state.json").at("status"), "complete");
  EXPECT_EQ(experiment::manifest_of_results(first_), ExperimentManifest::from_json(tiny_manifest_json()));
}

TEST_F(TinyRun, RerunReproducesEveryReport) {
  const auto a = experiment::collect_reports(first_);
  const auto b = experiment::collect_reports(second_);
  ASSERT_FALSE(a.empty());
  EXPECT_TRUE(a.contains("runs/fc/seed-0/metrics.json"));
  EXPECT_EQ(a, b);
}

TEST_F(TinyRun, ResumingACompleteRunChangesNothing) {
  const auto before = experiment::collect_reports(first_);
  std::ostringstream quiet;
  const auto m = experiment::manifest_of_results(first_);
  EXPECT_EQ(experiment::run_manifest(m, {{}, first_, &quiet}), first_);
  EXPECT_EQ(experiment::collect_reports(first_), before);
  // A different manifest may not resume this directory.
  auto other = m;
  other.train.epochs = 2;
  EXPECT_THROW(experiment::run_manifest(other, {{}, first_, &quiet}), ConfigError);
}

TEST_F(TinyRun, Table1ReportAndVersionGuard) {
  const auto t = experiment::table1_report({first_});
  EXPECT_EQ(t.columns, experiment::table1_columns());
  EXPECT_EQ(t.columns.size(), 9u);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "Common backdoor");
  EXPECT_EQ(t.rows[1][1], "FC backdoor");
  EXPECT_EQ(t.rows[1][7], "-");  // no JPEG2000 column in this manifest

  const auto copy = root_ / "altered";
  std::filesystem::remove_all(copy);
  std::filesystem::copy(second_, copy, std::filesystem::copy_options::recursive);
  auto s = experiment::read_json(copy / "summary.json");
  s["codec_versions"]["jpeg"] = "0.0-other";
  experiment::write_json(copy / "summary.json", s);
  EXPECT_THROW(experiment::table1_report({first_, copy}), ConfigError);
  EXPECT_EQ(experiment::table1_report({first_, copy}, true).rows.size(), 4u);

  const auto out = root_ / "report";
  const auto files = experiment::write_report({first_}, out, "table1", false);
  EXPECT_TRUE(std::filesystem::exists(out / "table1.csv"));
  EXPECT_TRUE(std::filesystem::exists(out / "table1.md"));
  EXPECT_EQ(files.size(), 3u);  // csv, md and the quality-sweep plot
  EXPECT_THROW(experiment::write_report({first_}, out, "fancy", false), ConfigError);
}

}  // namespace
}  // namespace crbd
