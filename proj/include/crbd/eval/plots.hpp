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
/// PNG plots of sweep results: line charts for numeric axes and a heatmap for
/// the train-codec x test-codec matrix.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "crbd/core/error.hpp"
#include "crbd/eval/metrics.hpp"

namespace crbd::eval {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // fractions in [0,1]
};

namespace detail {

inline const cv::Scalar& palette(std::size_t i) {
  static const std::vector<cv::Scalar> colors = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                                                 {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127}};
  return colors[i % colors.size()];
}

inline std::string fmt(double v, const char* f = "%.2f") {
  char buf[32];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void text(cv::Mat& img, const std::string& s, cv::Point p, double scale = 0.45,
                 const cv::Scalar& color = {0, 0, 0}) {
  cv::putText(img, s, p, cv::FONT_HERSHEY_SIMPLEX, scale, color, 1, cv::LINE_AA);
}

}  // namespace detail

/// Line chart with a [0,1] y axis.
inline cv::Mat render_line_chart(const std::vector<PlotSeries>& series, const std::string& title,
                                 const std::string& x_label, const std::string& y_label = "fraction") {
  if (series.empty()) throw ParameterError("line chart needs at least one series");
  const int W = 720, H = 480, L = 70, R = 190, T = 40, B = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = series[0].x.empty() ? 0.0 : series[0].x.front(), x1 = x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ParameterError("series '" + s.name + "' has mismatched x/y");
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
  }
  if (x1 == x0) x0 -= 1.0, x1 += 1.0;
  const int pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return T + static_cast<int>(std::lround((1.0 - std::clamp(y, 0.0, 1.0)) * ph)); };
  for (int k = 0; k <= 5; ++k) {
    const double y = k / 5.0;
    cv::line(img, {L, py(y)}, {L + pw, py(y)}, {225, 225, 225}, 1);
    detail::text(img, detail::fmt(y), {L - 42, py(y) + 5});
  }
  for (int k = 0; k <= 4; ++k) {
    const double x = x0 + (x1 - x0) * k / 4.0;
    detail::text(img, detail::fmt(x, std::abs(x1 - x0) < 1.0 ? "%.3f" : "%.0f"), {px(x) - 14, T + ph + 20});
  }
  cv::rectangle(img, {L, T}, {L + pw, T + ph}, {0, 0, 0}, 1);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const auto& c = detail::palette(i);
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      const cv::Point p{px(s.x[k]), py(s.y[k])};
      cv::circle(img, p, 3, c, cv::FILLED, cv::LINE_AA);
      if (k > 0) cv::line(img, {px(s.x[k - 1]), py(s.y[k - 1])}, p, c, 2, cv::LINE_AA);
    }
    const int ly = T + 12 + static_cast<int>(i) * 20;
    cv::line(img, {L + pw + 12, ly - 4}, {L + pw + 34, ly - 4}, c, 2, cv::LINE_AA);
    detail::text(img, s.name, {L + pw + 40, ly}, 0.4);
  }
  detail::text(img, title, {L, T - 14}, 0.55);
  detail::text(img, x_label, {L + pw / 2 - 40, H - 18});
  detail::text(img, y_label, {6, T - 14});
  return img;
}

/// Heatmap of `values[row][col]` in [0,1] with labelled rows and columns.
inline cv::Mat render_heatmap(const std::vector<std::vector<double>>& values, const std::vector<std::string>& rows,
                              const std::vector<std::string>& cols, const std::string& title) {
  if (values.size() != rows.size() || rows.empty() || cols.empty())
    throw ParameterError("heatmap needs one value row per label and at least one column");
  const int cell = 90, L = 140, T = 60, B = 20, R = 20;
  const int W = L + cell * static_cast<int>(cols.size()) + R, H = T + cell * static_cast<int>(rows.size()) + B;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::Mat unit(1, 1, CV_8UC1), rgb;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (values[r].size() != cols.size()) throw ParameterError("heatmap row " + rows[r] + " has the wrong width");
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double v = std::clamp(values[r][c], 0.0, 1.0);
      unit.at<std::uint8_t>(0, 0) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      cv::applyColorMap(unit, rgb, cv::COLORMAP_VIRIDIS);
      const auto px = rgb.at<cv::Vec3b>(0, 0);
      const cv::Point tl{L + static_cast<int>(c) * cell, T + static_cast<int>(r) * cell};
      cv::rectangle(img, tl, tl + cv::Point{cell - 2, cell - 2}, cv::Scalar(px[0], px[1], px[2]), cv::FILLED);
      detail::text(img, detail::fmt(v, "%.3f"), tl + cv::Point{18, cell / 2 + 4}, 0.5,
                   v > 0.5 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255));
    }
    detail::text(img, rows[r], {8, T + static_cast<int>(r) * cell + cell / 2 + 4});
  }
  for (std::size_t c = 0; c < cols.size(); ++c)
    detail::text(img, cols[c], {L + static_cast<int>(c) * cell + 4, T - 8}, 0.4);
  detail::text(img, title, {8, 22}, 0.55);
  return img;
}

/// One series per metric present in the sweep (TA, ASR, each ASR_bc).
inline std::vector<PlotSeries> sweep_series(const SweepResult& s) {
  std::map<std::string, PlotSeries> by_name;
  std::vector<std::string> order;
  auto add = [&](const std::string& n, double x, const Fraction& f) {
    if (!by_name.contains(n)) {
      by_name[n].name = n;
      order.push_back(n);
    }
    by_name[n].x.push_back(x);
    by_name[n].y.push_back(f.value());
  };
  for (const auto& p : s.points) {
    const double x = s.axis == "injection-rate" ? 100.0 * p.value : p.value;
    if (p.report.ta) add("TA", x, *p.report.ta);
    if (p.report.asr) add("ASR", x, *p.report.asr);
    for (const auto& [k, f] : p.report.asr_bc) {
      // Quality sweeps carry one spec per point; plot them as one curve.
      const std::string n = s.axis.ends_with("-quality") || s.axis == "jpeg2000-layers" ? "ASR_bc" : "ASR_bc " + k;
      add(n, x, f);
    }
  }
  std::vector<PlotSeries> out;
  for (const auto& n : order) out.push_back(by_name[n]);
  return out;
}

inline void write_png_plot(const cv::Mat& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write plot " + path.string());
}

/// Line chart for numeric sweeps, heatmap for the train-codec matrix.
inline void plot_sweep(const SweepResult& s, const std::filesystem::path& path, const std::string& title) {
  if (s.points.empty()) throw ParameterError("cannot plot an empty sweep");
  if (s.categorical()) {
    std::vector<std::string> rows, cols;
    for (const auto& [k, f] : s.points.front().report.asr_bc) cols.push_back(k);
    std::vector<std::vector<double>> v;
    for (const auto& p : s.points) {
      rows.push_back("train " + p.label);
      std::vector<double> row;
      for (const auto& c : cols) row.push_back(p.report.asr_bc.contains(c) ? p.report.asr_bc.at(c).value() : 0.0);
      v.push_back(std::move(row));
    }
    write_png_plot(render_heatmap(v, rows, cols, title), path);
    return;
  }
  const std::string x_label = s.axis == "injection-rate" ? "injection rate (%)" : s.axis;
  write_png_plot(render_line_chart(sweep_series(s), title, x_label), path);
}

}  // namespace crbd::eval
