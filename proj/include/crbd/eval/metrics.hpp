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
/// Test accuracy, attack success rate (plain and after a codec round trip),
/// quality sweeps and the train-codec x test-codec generalization matrix.
/// Every metric is an integer fraction so it can be recomputed from the
/// per-sample predictions.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crbd/codec/codec.hpp"
#include "crbd/core/error.hpp"
#include "crbd/data/dataset.hpp"
#include "crbd/nn/model.hpp"
#include "crbd/trigger/trigger.hpp"

namespace crbd::eval {

using codec::CompressionSpec;
using data::LabeledImages;
using nn::Model;
using nn::Tensor;

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 0;

  [[nodiscard]] double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

inline void to_json(nlohmann::json& j, const Fraction& f) { j = {{"num", f.num}, {"den", f.den}, {"value", f.value()}}; }
inline void from_json(const nlohmann::json& j, Fraction& f) {
  f.num = j.at("num").get<std::int64_t>();
  f.den = j.at("den").get<std::int64_t>();
  if (f.den < 0 || f.num < 0 || f.num > f.den) throw ConfigError("invalid fraction in report");
}

struct MetricsReport {
  std::optional<Fraction> ta;
  std::optional<Fraction> ir;
  std::optional<Fraction> asr;
  std::map<std::string, Fraction> asr_bc;  // keyed by spec tag
  std::string checkpoint_id;
  std::map<std::string, std::string> codec_versions;
  nlohmann::json provenance = nlohmann::json::object();

  /// Lowest ASR over every evaluated codec (1.0 when none were evaluated).
  [[nodiscard]] double min_asr_bc() const {
    double m = 1.0;
    for (const auto& [k, f] : asr_bc) m = std::min(m, f.value());
    return m;
  }

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json::object();
  if (r.ta) j["TA"] = *r.ta;
  if (r.ir) j["IR"] = *r.ir;
  if (r.asr) j["ASR"] = *r.asr;
  j["ASR_bc"] = nlohmann::json::object();
  for (const auto& [k, f] : r.asr_bc) j["ASR_bc"][k] = f;
  j["checkpoint_id"] = r.checkpoint_id;
  j["codec_versions"] = r.codec_versions;
  j["provenance"] = r.provenance;
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  r = MetricsReport{};
  if (j.contains("TA")) r.ta = j.at("TA").get<Fraction>();
  if (j.contains("IR")) r.ir = j.at("IR").get<Fraction>();
  if (j.contains("ASR")) r.asr = j.at("ASR").get<Fraction>();
  for (const auto& [k, v] : j.at("ASR_bc").items()) r.asr_bc[k] = v.get<Fraction>();
  r.checkpoint_id = j.value("checkpoint_id", "");
  r.codec_versions = j.value("codec_versions", std::map<std::string, std::string>{});
  r.provenance = j.value("provenance", nlohmann::json::object());
}

/// Argmax class (lowest index on ties) for every image, inference mode.
template <class T>
std::vector<int> predict(Model<T>& model, const std::vector<Image>& images, int batch = 250) {
  std::vector<int> out;
  out.reserve(images.size());
  std::vector<const Image*> ptrs;
  for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(batch)) {
    ptrs.clear();
    for (std::size_t k = i; k < std::min(images.size(), i + static_cast<std::size_t>(batch)); ++k) ptrs.push_back(&images[k]);
    const auto x = nn::images_to_tensor<T>(std::span<const Image* const>(ptrs));
    const auto& logits = model.forward(x, false);
    for (int n = 0; n < logits.batch(); ++n) {
      const auto z = logits.sample(n);
      out.push_back(static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
    }
  }
  return out;
}

/// Fraction of `test` classified as its true label.
template <class T>
Fraction test_accuracy(Model<T>& model, const LabeledImages& test, std::vector<int>* predictions = nullptr) {
  if (test.empty()) throw ParameterError("test_accuracy: empty test set");
  const auto pred = predict(model, test.images);
  Fraction f{0, static_cast<std::int64_t>(test.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) f.num += pred[i] == test.labels[i] ? 1 : 0;
  if (predictions) *predictions = pred;
  return f;
}

/// Triggered (and optionally compressed) versions of every test image whose
/// true label is not y_t.
inline std::vector<Image> backdoor_eval_set(const LabeledImages& test, const trigger::TriggerPattern& trig, int y_t,
                                            const CompressionSpec& spec) {
  std::vector<Image> xs;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == y_t) continue;
    Image xb = trigger::stamp(test.images[i], trig);
    xs.push_back(spec.codec() == codec::Codec::none ? std::move(xb) : codec::compress(xb, spec));
  }
  return xs;
}

/// Fraction of triggered non-target test images classified as y_t, after an
/// optional codec round trip (`CompressionSpec::none()` = plain ASR).
template <class T>
Fraction attack_success_rate(Model<T>& model, const LabeledImages& test, const trigger::TriggerPattern& trig, int y_t,
                             const CompressionSpec& spec = CompressionSpec::none(),
                             std::vector<int>* predictions = nullptr) {
  const auto xs = backdoor_eval_set(test, trig, y_t, spec);
  if (xs.empty()) throw ParameterError("attack_success_rate: no test images outside the target class");
  const auto pred = predict(model, xs);
  Fraction f{0, static_cast<std::int64_t>(pred.size())};
  for (int p : pred) f.num += p == y_t ? 1 : 0;
  if (predictions) *predictions = pred;
  return f;
}

/// Per-sample predictions behind a report, for recomputation.
struct PredictionDump {
  std::vector<int> clean;
  std::map<std::string, std::vector<int>> backdoor;  // "none" = plain ASR
};

/// TA, ASR and ASR_bc for every spec in one report.
template <class T>
MetricsReport evaluate(Model<T>& model, const LabeledImages& test, const trigger::TriggerPattern& trig, int y_t,
                       const std::vector<CompressionSpec>& specs, std::optional<Fraction> ir = std::nullopt,
                       PredictionDump* dump = nullptr) {
  MetricsReport r;
  r.ta = test_accuracy(model, test, dump ? &dump->clean : nullptr);
  r.asr = attack_success_rate(model, test, trig, y_t, CompressionSpec::none(), dump ? &dump->backdoor["none"] : nullptr);
  for (const auto& s : specs)
    r.asr_bc[s.tag()] = attack_success_rate(model, test, trig, y_t, s, dump ? &dump->backdoor[s.tag()] : nullptr);
  r.ir = ir;
  r.checkpoint_id = model.checksum();
  r.codec_versions = codec::codec_versions();
  r.provenance = {{"trigger_hash", trig.hash()}, {"target_label", y_t}, {"test_set", test.name},
                  {"test_size", test.size()}};
  return r;
}

struct SweepPoint {
  std::string label;   // categorical value or formatted number
  double value = 0.0;  // numeric axis value (quality, IR, or index)
  MetricsReport report;
  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

/// axis is one of jpeg-quality, webp-quality, jpeg2000-layers,
/// injection-rate, train-codec.
struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;

  [[nodiscard]] bool categorical() const { return axis == "train-codec"; }

  void validate() const {
    if (categorical()) return;
    for (std::size_t i = 1; i < points.size(); ++i)
      if (!(points[i].value > points[i - 1].value))
        throw ParameterError("sweep axis values must be strictly increasing");
  }

  /// One CSV row per (point, metric).
  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "axis,label,value,metric,num,den,fraction\n";
    os.precision(10);
    for (const auto& p : points) {
      auto row = [&](const std::string& metric, const Fraction& f) {
        os << axis << ',' << p.label << ',' << p.value << ',' << metric << ',' << f.num << ',' << f.den << ','
           << f.value() << '\n';
      };
      if (p.report.ta) row("TA", *p.report.ta);
      if (p.report.ir) row("IR", *p.report.ir);
      if (p.report.asr) row("ASR", *p.report.asr);
      for (const auto& [k, f] : p.report.asr_bc) row("ASR_bc:" + k, f);
    }
    return os.str();
  }

  friend bool operator==(const SweepResult&, const SweepResult&) = default;
};

inline void to_json(nlohmann::json& j, const SweepResult& s) {
  j = {{"axis", s.axis}, {"points", nlohmann::json::array()}};
  for (const auto& p : s.points) j["points"].push_back({{"label", p.label}, {"value", p.value}, {"report", p.report}});
}

inline void from_json(const nlohmann::json& j, SweepResult& s) {
  s.axis = j.at("axis").get<std::string>();
  s.points.clear();
  for (const auto& p : j.at("points"))
    s.points.push_back({p.at("label").get<std::string>(), p.at("value").get<double>(), p.at("report").get<MetricsReport>()});
}

inline std::string sweep_axis_for(codec::Codec c) {
  switch (c) {
    case codec::Codec::jpeg: return "jpeg-quality";
    case codec::Codec::webp: return "webp-quality";
    case codec::Codec::jpeg2000: return "jpeg2000-layers";
    case codec::Codec::none: break;
  }
  throw ParameterError("quality sweeps need a lossy codec");
}

/// ASR after `codec` at each level (quality, or layers for jpeg2000).
template <class T>
SweepResult quality_sweep(Model<T>& model, const LabeledImages& test, const trigger::TriggerPattern& trig, int y_t,
                          codec::Codec c, const std::vector<int>& levels) {
  if (levels.empty()) throw ParameterError("quality sweep needs at least one level");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (levels[i] <= levels[i - 1]) throw ParameterError("quality sweep levels must be strictly increasing");
  SweepResult out;
  out.axis = sweep_axis_for(c);
  for (int q : levels) {
    const auto spec = CompressionSpec::with_level(c, q);
    MetricsReport r;
    r.asr_bc[spec.tag()] = attack_success_rate(model, test, trig, y_t, spec);
    r.checkpoint_id = model.checksum();
    r.codec_versions = codec::codec_versions();
    out.points.push_back({std::to_string(q), static_cast<double>(q), std::move(r)});
  }
  return out;
}

/// Cross matrix: one point per training codec, each holding ASR_bc for every
/// test spec.
template <class T>
SweepResult generalization_matrix(const std::vector<std::pair<std::string, Model<T>*>>& models, const LabeledImages& test,
                                  const trigger::TriggerPattern& trig, int y_t, const std::vector<CompressionSpec>& specs) {
  if (models.empty() || specs.empty()) throw ParameterError("generalization matrix needs models and test specs");
  SweepResult out;
  out.axis = "train-codec";
  for (std::size_t i = 0; i < models.size(); ++i) {
    MetricsReport r;
    for (const auto& s : specs) r.asr_bc[s.tag()] = attack_success_rate(*models[i].second, test, trig, y_t, s);
    r.checkpoint_id = models[i].second->checksum();
    r.codec_versions = codec::codec_versions();
    out.points.push_back({models[i].first, static_cast<double>(i), std::move(r)});
  }
  return out;
}

}  // namespace crbd::eval
