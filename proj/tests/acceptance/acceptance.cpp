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

// Acceptance checks. Each invocation evaluates one criterion and prints a
// single "criterion N: PASS|FAIL|BLOCKED ..." line (plus supporting detail).
//
// Exit status: 0 pass, 1 fail, 77 blocked (a prerequisite such as the
// CIFAR-10 data is unavailable; ctest reports it as skipped).
//
// Criteria that need CIFAR-10 have a --proxy mode that runs the same
// protocol on the bundled synthetic dataset. A proxy result is reported as
// such and never stands in for the real criterion.

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "crbd/experiment/runner.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracle.hpp"

namespace crbd {
namespace {

namespace fs = std::filesystem;
using codec::Codec;
using codec::CompressionSpec;
using experiment::ExperimentManifest;

enum class Status { pass, fail, blocked };

struct Outcome {
  Status status = Status::fail;
  std::string summary;
};

struct Options {
  int criterion = 0;
  bool proxy = false;
  fs::path manifests = fs::path(CRBD_SOURCE_DIR) / "manifests";
  fs::path work = fs::temp_directory_path() / "crbd-acceptance";
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

Outcome verdict(bool ok, const std::string& summary) { return {ok ? Status::pass : Status::fail, summary}; }

/// Whether CIFAR-10 can be loaded (from $CRBD_DATA_ROOT, downloading if needed).
bool cifar10_available(std::string& why) {
  try {
    (void)data::load_cifar10(data::data_root(), true);
    return true;
  } catch (const DatasetUnavailable& e) {
    why = e.what();
    return false;
  }
}

/// Runs a bundled manifest into a fresh directory and returns the results dir.
fs::path run_bundled(const Options& o, const std::string& name, const std::string& tag) {
  const fs::path out = o.work / tag;
  fs::remove_all(out);
  fs::create_directories(out);
  std::ostringstream log;
  std::cout << "  running manifest " << name << " (results under " << out.string() << ")" << std::endl;
  const auto dir = experiment::run_manifest(o.manifests / (name + ".json"), {out, {}, &log});
  std::cout << "  finished " << dir.string() << std::endl;
  return dir;
}

/// Per-seed MetricsReport of one run, from summary.json.
std::vector<eval::MetricsReport> seed_reports(const fs::path& results, const std::string& run) {
  const auto s = experiment::read_json(results / "summary.json");
  for (const auto& r : s.at("runs")) {
    if (r.at("name") != run) continue;
    std::vector<eval::MetricsReport> out;
    for (const auto& seed : s.at("seeds"))
      out.push_back(r.at("reports").at(std::to_string(seed.get<std::uint64_t>())).get<eval::MetricsReport>());
    return out;
  }
  throw ConfigError("no run '" + run + "' in " + results.string());
}

template <class F>
double seed_mean(const std::vector<eval::MetricsReport>& rs, F f) {
  double acc = 0.0;
  for (const auto& r : rs) acc += f(r);
  return acc / static_cast<double>(rs.size());
}

// ---------------------------------------------------------------------------

Outcome criterion1(const Options& o) {
  std::string why;
  if (!cifar10_available(why)) return {Status::blocked, "CIFAR-10 unavailable: " + why};
  if (std::getenv("CRBD_ACCEPTANCE_FULL") == nullptr)
    return {Status::blocked,
            "ResNet-18 for 50 epochs on the full CIFAR-10 training set is GPU-scale work; this build trains on the "
            "CPU. Set CRBD_ACCEPTANCE_FULL=1 to run it anyway"};
  const auto dir = run_bundled(o, "table1_cifar10_desk", "c1");
  const auto clean = seed_reports(dir, "clean").front();
  const auto common = seed_reports(dir, "common").front();
  const auto fc = seed_reports(dir, "fc").front();
  const double c_asr = common.asr->value(), c_jpeg = common.asr_bc.at("jpeg-q50").value();
  const double f_asr = fc.asr->value(), f_min = fc.min_asr_bc();
  const double gap = clean.ta->value() - fc.ta->value();
  std::cout << "  common ASR " << fmt(c_asr) << " ASR_jpeg " << fmt(c_jpeg) << "; FC ASR " << fmt(f_asr)
            << " min ASR_bc " << fmt(f_min) << "; TA clean " << fmt(clean.ta->value()) << " FC "
            << fmt(fc.ta->value()) << "\n";
  return verdict(c_asr >= 0.95 && c_jpeg <= 0.30 && f_asr >= 0.90 && f_min >= 0.85 && gap <= 0.03,
                 "common ASR " + fmt(c_asr) + " (>=0.95), ASR_jpeg " + fmt(c_jpeg) + " (<=0.30), FC ASR " +
                     fmt(f_asr) + " (>=0.90), FC min ASR_bc " + fmt(f_min) + " (>=0.85), TA gap " + fmt(gap) +
                     " (<=0.03)");
}

Outcome criterion2(const Options& o) {
  std::string why;
  std::string manifest = "cpu_smoke_cifar10";
  if (o.proxy) {
    manifest = "cpu_smoke_synthetic";
  } else if (!cifar10_available(why)) {
    return {Status::blocked, "CIFAR-10 unavailable: " + why + " (see the synthetic proxy)"};
  }
  const auto dir = run_bundled(o, manifest, o.proxy ? "c2-proxy" : "c2");
  const auto common = seed_reports(dir, "common");
  const auto fc = seed_reports(dir, "fc");
  for (std::size_t i = 0; i < fc.size(); ++i)
    std::cout << "  seed " << i << ": FC min ASR_bc " << fmt(fc[i].min_asr_bc()) << ", common min ASR_bc "
              << fmt(common[i].min_asr_bc()) << "\n";
  const double margin = seed_mean(fc, [](const auto& r) { return r.min_asr_bc(); }) -
                        seed_mean(common, [](const auto& r) { return r.min_asr_bc(); });
  return verdict(margin >= 0.30, std::string(o.proxy ? "[synthetic proxy] " : "") + "mean FC-minus-common min ASR_bc " +
                                     fmt(margin) + " over " + std::to_string(fc.size()) + " seeds (>=0.30)");
}

Outcome criterion3(const Options&) {
  bool ok = true;
  std::ostringstream s;
  // Identical features.
  Rng rng(3);
  nn::Tensor<double> f(8, {64});
  for (auto& v : f.values()) v = rng.normal();
  const train::FeatureMap<double> same{{"relu3", f}, {"flatten", f}};
  const double zero = train::fc_loss(same, same, {{{"relu3", 0.5}, {"flatten", 0.5}}});
  ok &= std::abs(zero) <= 1e-9;
  s << "fc_loss(identical) " << zero;
  // alpha = 0 decomposition.
  nn::Tensor<double> lb(6, {10}), lbc(6, {10});
  for (auto& v : lb.values()) v = rng.normal(0.0, 3.0);
  for (auto& v : lbc.values()) v = rng.normal(0.0, 3.0);
  const double dec = std::abs(train::total_loss(lb, lbc, 5, 7.25, 0.0) -
                              (train::cross_entropy(lb, 5) + train::cross_entropy(lbc, 5)));
  ok &= dec <= 1e-6;
  s << "; alpha=0 residual " << dec;
  // Uniform logits.
  const double ce = std::abs(train::cross_entropy(nn::Tensor<double>(4, {10}, 0.0), 2) - std::log(10.0));
  ok &= ce <= 1e-6;
  s << "; uniform CE - ln10 " << ce;
  // Finite differences of the paired objective on smallcnn (64-bit).
  const ImageDims dims{3, 8, 8};
  auto m = testing::tiny_smallcnn(11, dims);
  const auto batch = testing::make_pair_batch(dims, 2, 17);
  const auto sel = m.default_selector();
  double worst = 0.0;
  for (double alpha : {0.1, 10.0}) {
    const auto r = testing::check_gradient(
        m, [&](nn::Model<double>& mm) { return testing::pair_objective(mm, batch, sel, alpha); },
        [&](nn::Model<double>& mm) { testing::pair_objective_grad(mm, batch, sel, alpha); });
    std::cout << "  gradient check alpha=" << alpha << ": " << r.checked << " parameters, relative error "
              << r.rel_error << "\n";
    worst = std::max(worst, r.rel_error);
  }
  ok &= worst <= 1e-3;
  s << "; gradient relative error " << worst << " (<=1e-3)";
  return verdict(ok, s.str());
}

Outcome criterion4(const Options&) {
  const auto test = data::make_synthetic(0, 100, 77).test;
  const auto trig = trigger::make_gaussian_trigger(test.dims, 0.5, 0.2, 4);
  const std::vector<CompressionSpec> specs{CompressionSpec::jpeg(), CompressionSpec::jpeg2000(), CompressionSpec::webp()};
  auto linear = nn::Model<float>::from_spec(testing::linear_spec(test.dims), 10, 31);
  auto cnn = nn::build_model<float>("smallcnn", 10, 32);
  auto constant = testing::constant_model(test.dims, 10, 3);
  bool ok = true;
  int compared = 0;
  const std::vector<std::pair<std::string, nn::Model<float>*>> models{
      {"linear", &linear}, {"smallcnn", &cnn}, {"constant", &constant}};
  for (const auto& [name, m] : models) {
    const auto r = eval::evaluate(*m, test, trig, 3, specs);
    const auto o = testing::oracle_metrics(*m, test, trig, 3, specs);
    const bool same = *r.ta == o.ta && *r.asr == o.asr && r.asr_bc == o.asr_bc;
    std::cout << "  " << name << ": TA " << r.ta->num << "/" << r.ta->den << " ASR " << r.asr->num << "/"
              << r.asr->den << (same ? " == oracle" : " != oracle") << "\n";
    ok &= same;
    compared += 2 + static_cast<int>(specs.size());
  }
  return verdict(ok, std::to_string(compared) + " integer-count metrics on a 100-sample fixture match the scalar oracle");
}

Outcome criterion5(const Options&) {
  const auto fixtures = testing::codec_fixtures();
  bool deterministic = true;
  for (const auto c : {Codec::jpeg, Codec::jpeg2000, Codec::webp})
    for (const auto& x : fixtures) {
      const auto spec = CompressionSpec::defaults(c);
      deterministic &= codec::encode(x, spec) == codec::encode(x, spec);
    }
  int ordered = 0, total = 0;
  for (const auto c : {Codec::jpeg, Codec::webp})
    for (const auto& x : fixtures) {
      const double p10 = codec::psnr(x, codec::compress(x, CompressionSpec::with_level(c, 10)));
      const double p50 = codec::psnr(x, codec::compress(x, CompressionSpec::with_level(c, 50)));
      const double p90 = codec::psnr(x, codec::compress(x, CompressionSpec::with_level(c, 90)));
      ++total;
      if (p90 > p50 && p50 > p10) ++ordered;
      else std::cout << "  " << codec::codec_name(c) << " " << to_string(x.dims()) << ": PSNR q10/50/90 " << p10 << "/"
                     << p50 << "/" << p90 << " out of order\n";
    }
  // JPEG2000 has no quality knob; more layers means more loss. Its encoder
  // emits a minimum-size stream, so l50 and l90 coincide on small images.
  int j2k_ordered = 0;
  for (const auto& x : fixtures) {
    const double l10 = codec::psnr(x, codec::compress(x, CompressionSpec::jpeg2000(10)));
    const double l50 = codec::psnr(x, codec::compress(x, CompressionSpec::jpeg2000(50)));
    const double l90 = codec::psnr(x, codec::compress(x, CompressionSpec::jpeg2000(90)));
    if (l10 > l50 && l50 >= l90) ++j2k_ordered;
  }
  std::cout << "  jpeg2000 layers: l10 > l50 >= l90 on " << j2k_ordered << "/" << fixtures.size() << " fixtures\n";
  return verdict(deterministic && ordered == total && j2k_ordered == static_cast<int>(fixtures.size()),
                 std::string("byte-identical streams: ") + (deterministic ? "yes" : "NO") + "; PSNR q90>q50>q10 on " +
                     std::to_string(ordered) + "/" + std::to_string(total) + " (fixture, codec) pairs");
}

Outcome criterion6(const Options& o) {
  std::string why;
  std::string manifest = "generalization_cifar10";
  if (o.proxy) {
    manifest = "generalization_synthetic";
  } else if (!cifar10_available(why)) {
    return {Status::blocked, "CIFAR-10 unavailable: " + why + " (see the synthetic proxy)"};
  }
  const auto dir = run_bundled(o, manifest, o.proxy ? "c6-proxy" : "c6");
  const auto common = seed_reports(dir, "common");
  const auto fc = seed_reports(dir, "fc-jpeg");
  bool ok = true;
  std::ostringstream s;
  s << (o.proxy ? "[synthetic proxy] " : "") << "JPEG-only FC minus common, mean over " << fc.size() << " seeds:";
  for (const char* tag : {"jpeg2000-l30", "webp-q50"}) {
    const double f = seed_mean(fc, [&](const auto& r) { return r.asr_bc.at(tag).value(); });
    const double c = seed_mean(common, [&](const auto& r) { return r.asr_bc.at(tag).value(); });
    std::cout << "  " << tag << ": FC(jpeg) " << fmt(f) << " common " << fmt(c) << "\n";
    ok &= f - c >= 0.20;
    s << " " << tag << " " << fmt(f - c);
  }
  s << " (each >=0.20)";
  return verdict(ok, s.str());
}

Outcome criterion7(const Options& o) {
  std::string why;
  const bool cifar = cifar10_available(why);
  const std::string manifest = cifar ? "quality_sweep_cifar10" : "quality_sweep_synthetic";
  if (!cifar) std::cout << "  CIFAR-10 unavailable (" << why << "); using the synthetic dataset\n";
  const auto dir = run_bundled(o, manifest, "c7");
  const auto m = ExperimentManifest::load(o.manifests / (manifest + ".json"));
  bool ok = true;
  std::ostringstream s;
  s << manifest << ":";
  for (std::uint64_t seed : m.seeds) {
    const auto sw = experiment::read_json(dir / "evaluations" / "jpeg_quality" / ("seed-" + std::to_string(seed) + ".json"))
                        .at("sweep")
                        .get<eval::SweepResult>();
    std::cout << "  seed " << seed << " ASR_jpeg:";
    double worst_drop = 0.0;
    for (std::size_t i = 0; i < sw.points.size(); ++i) {
      const double v = sw.points[i].report.asr_bc.begin()->second.value();
      std::cout << " q" << sw.points[i].label << "=" << fmt(v, 3);
      if (i > 0) worst_drop = std::max(worst_drop, sw.points[i - 1].report.asr_bc.begin()->second.value() - v);
    }
    std::cout << "\n";
    ok &= sw.points.size() == 9 && worst_drop <= 0.02;
    s << " seed " << seed << " " << sw.points.size() << " levels, largest step decrease " << fmt(worst_drop)
      << " (<=0.02)";
  }
  return verdict(ok, s.str());
}

Outcome criterion8(const Options& o) {
  const std::string manifest = "smoke_synthetic";
  const auto a = experiment::collect_reports(run_bundled(o, manifest, "c8-a"));
  const auto b = experiment::collect_reports(run_bundled(o, manifest, "c8-b"));
  std::size_t fractions = 0, mismatched = 0;
  std::function<void(const nlohmann::json&, const nlohmann::json&)> walk = [&](const nlohmann::json& x,
                                                                               const nlohmann::json& y) {
    if (x.is_object() && x.contains("num") && x.contains("den")) {
      ++fractions;
      if (x != y) ++mismatched;
      return;
    }
    if (x.is_object() || x.is_array())
      for (auto it = x.begin(); it != x.end(); ++it) {
        if (x.is_object() && !y.contains(it.key())) {
          ++mismatched;
          continue;
        }
        walk(*it, x.is_object() ? y.at(it.key()) : y.at(static_cast<std::size_t>(std::distance(x.begin(), it))));
      }
  };
  bool same_files = a.size() == b.size();
  for (const auto& [path, j] : a) {
    if (!b.contains(path)) {
      same_files = false;
      continue;
    }
    walk(j, b.at(path));
  }
  return verdict(same_files && mismatched == 0 && fractions > 0 && a == b,
                 manifest + " run twice: " + std::to_string(a.size()) + " report files, " + std::to_string(fractions) +
                     " fractions, " + std::to_string(mismatched) + " differ");
}

const char* title(int n) {
  switch (n) {
    case 1: return "desk-scale attack comparison";
    case 2: return "CPU smoke FC vs common margin";
    case 3: return "loss correctness";
    case 4: return "metric oracle equivalence";
    case 5: return "codec determinism and PSNR ordering";
    case 6: return "single-codec generalization";
    case 7: return "JPEG quality-sweep trend";
    case 8: return "manifest reproducibility";
  }
  return "?";
}

}  // namespace
}  // namespace crbd

int main(int argc, char** argv) {
  using namespace crbd;
  Options o;
  CLI::App app{"crbd acceptance checks"};
  app.add_option("--criterion", o.criterion, "criterion number (1-8)")->required()->check(CLI::Range(1, 8));
  app.add_flag("--proxy", o.proxy, "criteria 2 and 6: run the protocol on the synthetic dataset");
  app.add_option("--manifests", o.manifests, "directory of bundled manifests");
  app.add_option("--work-dir", o.work, "scratch directory for results");
  CLI11_PARSE(app, argc, argv);
  if (o.proxy && o.criterion != 2 && o.criterion != 6) {
    std::cerr << "--proxy applies to criteria 2 and 6 only\n";
    return 2;
  }

  Outcome out;
  try {
    switch (o.criterion) {
      case 1: out = criterion1(o); break;
      case 2: out = criterion2(o); break;
      case 3: out = criterion3(o); break;
      case 4: out = criterion4(o); break;
      case 5: out = criterion5(o); break;
      case 6: out = criterion6(o); break;
      case 7: out = criterion7(o); break;
      case 8: out = criterion8(o); break;
    }
  } catch (const std::exception& e) {
    out = {Status::fail, std::string("error: ") + e.what()};
  }
  const char* label = out.status == Status::pass ? "PASS" : out.status == Status::fail ? "FAIL" : "BLOCKED";
  std::cout << "criterion " << o.criterion << (o.proxy ? " (synthetic proxy)" : "") << ": " << label << " - "
            << title(o.criterion) << " - " << out.summary << std::endl;
  return out.status == Status::pass ? 0 : out.status == Status::fail ? 1 : 77;
}
