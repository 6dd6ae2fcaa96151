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

// End-to-end checks of the `crbd` command-line tool: exit codes, the
// results layout of `run`, and the eval / sweep / report subcommands.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "crbd/experiment/runner.hpp"
#include "support/fixtures.hpp"

namespace crbd {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result crbd_cli(const std::string& args) {
  const std::string cmd = std::string("'") + CRBD_CLI_PATH + "' " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.output += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

constexpr const char* kTinyManifest = R"({
  "name": "cli_tiny",
  "seeds": [0],
  "output_dir": "results",
  "dataset": {"name": "synthetic", "synthetic_train": 200, "synthetic_test": 60},
  "trigger": {"kind": "gaussian", "std": 0.5, "blend": 0.2, "seed": 7},
  "poison": {"target_label": 5, "n_normal": 10,
             "per_codec": [{"spec": "jpeg-q50", "count": 10}, {"spec": "jpeg2000-l30", "count": 10}]},
  "train": {"epochs": 1, "batch_size": 50, "schedule": [[0, 0.05]], "schedule_epochs": 1},
  "runs": [{"name": "fc", "mode": "fc-backdoor"}],
  "evaluation": [{"type": "metrics", "name": "table", "specs": ["jpeg-q50", "jpeg2000-l30"]}]
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli");
    std::ofstream(dir_ / "tiny.json") << kTinyManifest;
    run_ = crbd_cli("run " + quoted(dir_ / "tiny.json"));
    for (const auto& e : fs::directory_iterator(dir_ / "results"))
      if (e.is_directory()) results_ = e.path();
  }
  static inline fs::path dir_, results_;
  static inline Result run_;
};

TEST_F(Cli, UsageAndValidationErrorsExitWithTwo) {
  EXPECT_EQ(crbd_cli("").code, 2);
  EXPECT_EQ(crbd_cli("frobnicate").code, 2);
  EXPECT_EQ(crbd_cli("run").code, 2);
  std::ofstream(dir_ / "bad.json") << R"({"name": "bad", "runs": [{"name": "a", "mode": "x"}], "typo": 1})";
  const auto bad = crbd_cli("validate " + quoted(dir_ / "bad.json"));
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("typo"), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find("runs[0].mode"), std::string::npos) << bad.output;
  EXPECT_EQ(crbd_cli("run " + quoted(dir_ / "tiny.json") + " --set nope.field=1").code, 2);
}

TEST_F(Cli, ValidateAndLayers) {
  const auto ok = crbd_cli("validate " + quoted(dir_ / "tiny.json"));
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_NE(ok.output.find("hash"), std::string::npos);
  const auto layers = crbd_cli("layers --arch smallcnn");
  EXPECT_EQ(layers.code, 0);
  for (const char* name : {"conv1", "relu3", "flatten", "fc2"}) EXPECT_NE(layers.output.find(name), std::string::npos);
  EXPECT_EQ(crbd_cli("layers --arch lenet").code, 2);
}

TEST_F(Cli, MissingDatasetIsARuntimeFailure) {
  std::ofstream(dir_ / "cifar.json") << R"({"name": "nodata", "dataset": {"name": "cifar10", "root": ")"
                                     << (dir_ / "no-such-dir").string()
                                     << R"(", "fetch": false}, "runs": [{"name": "clean", "mode": "clean"}]})";
  const auto r = crbd_cli("run " + quoted(dir_ / "cifar.json") + " --output-dir " + quoted(dir_ / "nodata"));
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST_F(Cli, RunWritesResults) {
  ASSERT_EQ(run_.code, 0) << run_.output;
  ASSERT_FALSE(results_.empty());
  EXPECT_TRUE(fs::exists(results_ / "summary.json"));
  EXPECT_TRUE(fs::exists(results_ / "runs" / "fc" / "seed-0" / "model.ckpt"));
  EXPECT_EQ(experiment::read_json(results_ / "state.json").at("status"), "complete");
  // Resuming a finished directory is a no-op that succeeds.
  const auto again = crbd_cli("run --resume " + quoted(results_));
  EXPECT_EQ(again.code, 0) << again.output;
}

TEST_F(Cli, EvalSingleCodecMatchesRecordedMetrics) {
  ASSERT_EQ(run_.code, 0);
  const auto ckpt = results_ / "runs" / "fc" / "seed-0" / "model.ckpt";
  const auto r = crbd_cli("eval --checkpoint " + quoted(ckpt) + " --codec jpeg --quality 50 --out " +
                          quoted(dir_ / "eval.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto recorded = experiment::read_json(results_ / "runs" / "fc" / "seed-0" / "metrics.json")
                            .get<eval::MetricsReport>()
                            .asr_bc.at("jpeg-q50");
  const auto fresh = experiment::read_json(dir_ / "eval.json").get<eval::MetricsReport>().asr_bc.at("jpeg-q50");
  EXPECT_EQ(fresh, recorded);
  EXPECT_EQ(crbd_cli("eval --checkpoint " + quoted(ckpt) + " --codec gif").code, 2);
  EXPECT_EQ(crbd_cli("eval --checkpoint " + quoted(dir_ / "missing.ckpt")).code, 3);
}

TEST_F(Cli, SweepProducesNinePoints) {
  ASSERT_EQ(run_.code, 0);
  const auto ckpt = results_ / "runs" / "fc" / "seed-0" / "model.ckpt";
  const auto r = crbd_cli("sweep --checkpoint " + quoted(ckpt) + " --axis jpeg-quality --grid 10:90:10 --out " +
                          quoted(dir_ / "sweep"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto s = experiment::read_json(dir_ / "sweep.json").at("sweep").get<eval::SweepResult>();
  EXPECT_EQ(s.axis, "jpeg-quality");
  ASSERT_EQ(s.points.size(), 9u);
  EXPECT_EQ(s.points.front().value, 10);
  EXPECT_EQ(s.points.back().value, 90);
  EXPECT_TRUE(fs::exists(dir_ / "sweep.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "sweep.png"));
  EXPECT_EQ(crbd_cli("sweep --checkpoint " + quoted(ckpt) + " --axis brightness").code, 2);
}

TEST_F(Cli, ReportRendersTable) {
  ASSERT_EQ(run_.code, 0);
  const auto r = crbd_cli("report " + quoted(results_) + " --style table1 --out " + quoted(dir_ / "report"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream csv(dir_ / "report" / "table1.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "Dataset,Attack,Trigger,IR,TA,ASR,JPEG,JPEG2000,WEBP");
  EXPECT_EQ(crbd_cli("report " + quoted(dir_ / "no-results")).code, 2);
}

}  // namespace
}  // namespace crbd
