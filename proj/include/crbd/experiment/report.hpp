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
/// Renders results directories into attack-comparison tables (CSV and
/// Markdown) and re-emits sweep plots.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crbd/eval/metrics.hpp"
#include "crbd/eval/plots.hpp"
#include "crbd/experiment/runner.hpp"

namespace crbd::experiment {

/// Column schema of the attack-comparison table.
inline const std::vector<std::string>& table1_columns() {
  static const std::vector<std::string> cols = {"Dataset", "Attack", "Trigger", "IR",      "TA",
                                                "ASR",     "JPEG",   "JPEG2000", "WEBP"};
  return cols;
}

struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << "\n";
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return os.str();
  }

  [[nodiscard]] std::string to_markdown() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      os << "|";
      for (const auto& c : cells) os << " " << c << " |";
      os << "\n";
    };
    line(columns);
    os << "|";
    for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

inline std::string percent(const std::optional<eval::Fraction>& f) {
  if (!f || f->den == 0) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * f->value());
  return buf;
}

inline std::string dataset_label(const std::string& name) {
  if (name == "cifar10") return "CIFAR-10";
  if (name == "synthetic") return "Synthetic";
  return name;
}

inline std::string attack_label(const std::string& mode) {
  if (mode == "clean") return "Clean";
  if (mode == "common-backdoor") return "Common backdoor";
  if (mode == "fc-backdoor") return "FC backdoor";
  return mode;
}

inline std::string trigger_label(const std::string& kind) {
  if (kind == "gaussian") return "Gaussian noise";
  if (kind == "logo") return "TEST logo";
  if (kind == "trojan") return "TrojanNN";
  return kind;
}

/// First ASR_bc entry of the given codec family in a report.
inline std::optional<eval::Fraction> codec_column(const eval::MetricsReport& r, codec::Codec c) {
  for (const auto& [tag, f] : r.asr_bc)
    if (codec::CompressionSpec::parse(tag).codec() == c) return f;
  return std::nullopt;
}

/// Builds the table from `summary.json` files. Rows are pooled over
/// replicates. Results produced with different codec-library versions are
/// refused unless `force` is set.
inline ReportTable table1_report(const std::vector<fs::path>& results_dirs, bool force = false) {
  if (results_dirs.empty()) throw ConfigError("report needs at least one results directory");
  ReportTable t;
  t.columns = table1_columns();
  std::optional<nlohmann::json> versions;
  for (const auto& dir : results_dirs) {
    const fs::path sfile = dir / "summary.json";
    if (!fs::exists(sfile)) throw ConfigError(dir.string() + " has no summary.json (incomplete run?)");
    const auto s = read_json(sfile);
    const auto& v = s.at("codec_versions");
    if (!versions) {
      versions = v;
    } else if (*versions != v && !force) {
      throw ConfigError("results in " + dir.string() + " were produced with different codec-library versions (" +
                        v.dump() + " vs " + versions->dump() + "); pass --force to merge anyway");
    }
    for (const auto& run : s.at("runs")) {
      const auto rep = run.at("pooled").get<eval::MetricsReport>();
      const bool clean = run.at("mode") == "clean";
      t.rows.push_back({dataset_label(s.at("dataset").at("name").get<std::string>()),
                        attack_label(run.at("mode").get<std::string>()),
                        clean ? "-" : trigger_label(s.at("trigger").at("kind").get<std::string>()),
                        percent(rep.ir),
                        percent(rep.ta),
                        clean ? "-" : percent(rep.asr),
                        clean ? "-" : percent(codec_column(rep, codec::Codec::jpeg)),
                        clean ? "-" : percent(codec_column(rep, codec::Codec::jpeg2000)),
                        clean ? "-" : percent(codec_column(rep, codec::Codec::webp))});
    }
  }
  return t;
}

/// Writes `<stem>.csv`, `<stem>.md` and re-plots every pooled sweep found.
inline std::vector<fs::path> write_report(const std::vector<fs::path>& results_dirs, const fs::path& out_dir,
                                          const std::string& style, bool force) {
  if (style != "table1") throw ConfigError("unknown report style '" + style + "' (expected table1)");
  const auto t = table1_report(results_dirs, force);
  fs::create_directories(out_dir);
  std::vector<fs::path> written{out_dir / "table1.csv", out_dir / "table1.md"};
  std::ofstream(written[0]) << t.to_csv();
  std::ofstream(written[1]) << t.to_markdown();
  for (const auto& dir : results_dirs) {
    const auto s = read_json(dir / "summary.json");
    for (const auto& e : s.at("evaluations")) {
      if (!e.contains("pooled")) continue;
      const auto sweep = e.at("pooled").get<eval::SweepResult>();
      const fs::path png = out_dir / (s.at("manifest").get<std::string>() + "-" + e.at("name").get<std::string>() + ".png");
      eval::plot_sweep(sweep, png, e.at("name").get<std::string>());
      written.push_back(png);
    }
  }
  return written;
}

}  // namespace crbd::experiment
