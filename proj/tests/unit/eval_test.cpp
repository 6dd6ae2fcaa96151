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

#include "crbd/eval/metrics.hpp"
#include "crbd/eval/studies.hpp"
#include "crbd/nn/zoo.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

namespace crbd {
namespace {

using codec::CompressionSpec;
using eval::Fraction;

const std::vector<CompressionSpec> kSpecs{CompressionSpec::jpeg(), CompressionSpec::jpeg2000(), CompressionSpec::webp()};

data::LabeledImages test_fixture(std::size_t n = 100) { return data::make_synthetic(0, n, 77).test; }

TEST(Evaluate, MatchesScalarOracleExactly) {
  const auto test = test_fixture();
  const auto trig = trigger::make_gaussian_trigger(test.dims, 0.5, 0.2, 4);
  auto linear = nn::Model<float>::from_spec(testing::linear_spec(test.dims), 10, 31);
  auto cnn = nn::build_model<float>("smallcnn", 10, 32);
  for (auto* m : {&linear, &cnn}) {
    eval::PredictionDump dump;
    const auto r = eval::evaluate(*m, test, trig, 3, kSpecs, std::nullopt, &dump);
    const auto o = testing::oracle_metrics(*m, test, trig, 3, kSpecs);
    EXPECT_EQ(*r.ta, o.ta);
    EXPECT_EQ(*r.asr, o.asr);
    EXPECT_EQ(r.asr_bc, o.asr_bc);
    EXPECT_EQ(r.ta->den, 100);
    EXPECT_EQ(r.asr->den, 90);
    EXPECT_EQ(dump.clean.size(), 100u);
    EXPECT_EQ(dump.backdoor.size(), kSpecs.size() + 1);
  }
}

TEST(Evaluate, ConstantModelGivesChanceAccuracyAndFullAttackSuccess) {
  const auto test = test_fixture();
  const auto trig = trigger::make_gaussian_trigger(test.dims, 0.5, 0.2, 4);
  auto m = testing::constant_model(test.dims, 10, 0);
  const auto r = eval::evaluate(m, test, trig, 0, kSpecs);
  EXPECT_EQ(*r.ta, (Fraction{10, 100}));
  EXPECT_EQ(*r.asr, (Fraction{90, 90}));
  for (const auto& [k, f] : r.asr_bc) EXPECT_EQ(f, (Fraction{90, 90})) << k;
  EXPECT_EQ(r.min_asr_bc(), 1.0);
  // Against any other target the constant model never succeeds.
  EXPECT_EQ(eval::attack_success_rate(m, test, trig, 4), (Fraction{0, 90}));
}

TEST(Evaluate, ErrorsOnDegenerateSets) {
  auto m = testing::constant_model({3, 32, 32}, 10, 0);
  const auto trig = trigger::make_gaussian_trigger({3, 32, 32}, 0.5, 0.2, 4);
  EXPECT_THROW(eval::test_accuracy(m, data::LabeledImages{}), ParameterError);
  auto only_target = data::make_synthetic(0, 1, 1).test;  // one image of class 0
  EXPECT_THROW(eval::attack_success_rate(m, only_target, trig, 0), ParameterError);
}

TEST(QualitySweep, SinglePointEqualsAttackSuccessRate) {
  const auto test = test_fixture(60);
  const auto trig = trigger::make_gaussian_trigger(test.dims, 0.5, 0.2, 4);
  auto m = nn::Model<float>::from_spec(testing::linear_spec(test.dims), 10, 3);
  const auto s = eval::quality_sweep(m, test, trig, 2, codec::Codec::jpeg, {30});
  ASSERT_EQ(s.points.size(), 1u);
  EXPECT_EQ(s.axis, "jpeg-quality");
  EXPECT_EQ(s.points[0].report.asr_bc.at("jpeg-q30"),
            eval::attack_success_rate(m, test, trig, 2, CompressionSpec::jpeg(30)));
  const auto full = eval::quality_sweep(m, test, trig, 2, codec::Codec::webp, {10, 50, 90});
  EXPECT_EQ(full.points.size(), 3u);
  EXPECT_NO_THROW(full.validate());
  EXPECT_THROW(eval::quality_sweep(m, test, trig, 2, codec::Codec::jpeg, {50, 50}), ParameterError);
  EXPECT_THROW(eval::quality_sweep(m, test, trig, 2, codec::Codec::jpeg, {}), ParameterError);
  EXPECT_THROW(eval::quality_sweep(m, test, trig, 2, codec::Codec::none, {50}), ParameterError);
}

TEST(GeneralizationMatrix, OneRowPerModelOneColumnPerSpec) {
  const auto test = test_fixture(40);
  const auto trig = trigger::make_gaussian_trigger(test.dims, 0.5, 0.2, 4);
  auto a = nn::Model<float>::from_spec(testing::linear_spec(test.dims), 10, 3);
  auto b = testing::constant_model(test.dims, 10, 2);
  const auto g = eval::generalization_matrix<float>({{"jpeg", &a}, {"webp", &b}}, test, trig, 2, kSpecs);
  EXPECT_TRUE(g.categorical());
  ASSERT_EQ(g.points.size(), 2u);
  EXPECT_EQ(g.points[0].label, "jpeg");
  for (const auto& s : kSpecs) {
    EXPECT_EQ(g.points[0].report.asr_bc.at(s.tag()), eval::attack_success_rate(a, test, trig, 2, s));
    EXPECT_EQ(g.points[1].report.asr_bc.at(s.tag()).value(), 1.0);
  }
  EXPECT_THROW(eval::generalization_matrix<float>({}, test, trig, 2, kSpecs), ParameterError);
  EXPECT_THROW(eval::generalization_matrix<float>({{"a", &a}}, test, trig, 2, {}), ParameterError);
}

TEST(Report, JsonRoundTripAndCsv) {
  eval::MetricsReport r;
  r.ta = Fraction{9, 10};
  r.asr = Fraction{3, 4};
  r.ir = Fraction{4000, 50000};
  r.asr_bc["jpeg-q50"] = Fraction{1, 4};
  r.asr_bc["webp-q50"] = Fraction{2, 4};
  r.checkpoint_id = "abc";
  r.codec_versions = {{"jpeg", "9"}};
  r.provenance = {{"seed", 1}};
  EXPECT_EQ(nlohmann::json(r).get<eval::MetricsReport>(), r);
  EXPECT_DOUBLE_EQ(r.min_asr_bc(), 0.25);
  EXPECT_DOUBLE_EQ(r.ir->value(), 0.08);

  eval::SweepResult s{"jpeg-quality", {{"10", 10, r}, {"20", 20, r}}};
  EXPECT_EQ(nlohmann::json(s).get<eval::SweepResult>(), s);
  const auto csv = s.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 5);
  EXPECT_NE(csv.find("jpeg-quality,10,10,ASR_bc:jpeg-q50,1,4,0.25"), std::string::npos);
  s.points[1].value = 5;
  EXPECT_THROW(s.validate(), ParameterError);
  EXPECT_THROW((nlohmann::json{{"num", 5}, {"den", 4}}.get<Fraction>()), ConfigError);
}

TEST(InjectionRateStudy, SplitsCountsEvenly) {
  const auto c3 = eval::split_compressed_count(1000, kSpecs);
  ASSERT_EQ(c3.size(), 3u);
  EXPECT_EQ(c3[0].count, 334);
  EXPECT_EQ(c3[1].count, 333);
  EXPECT_EQ(c3[2].count, 333);
  EXPECT_TRUE(eval::split_compressed_count(0, kSpecs).empty());
  EXPECT_THROW(eval::split_compressed_count(-1, kSpecs), ParameterError);
  EXPECT_THROW(eval::split_compressed_count(3, {}), ParameterError);
}

TEST(InjectionRateStudy, PointsCarryRatesModesAndResume) {
  const ImageDims dims{3, 8, 8};
  const auto splits = data::make_synthetic(200, 50, 6, dims);
  const auto trig = trigger::make_gaussian_trigger(dims, 0.5, 0.2, 4);
  eval::InjectionRateStudyConfig cfg;
  cfg.n_normal = 20;
  cfg.codecs = {CompressionSpec::jpeg(), CompressionSpec::webp()};  // 8x8 images are too small for JPEG2000
  cfg.compressed_counts = {0, 12};
  cfg.eval_specs = {CompressionSpec::jpeg()};
  cfg.train.epochs = 1;
  cfg.train.batch_size = 50;
  cfg.fc = {nn::Model<float>::from_spec(nn::smallcnn_spec(dims), 10, 1).default_selector(), 0.1, "l2"};
  cfg.persist_dir = testing::scratch_dir("ir-study");
  int trained = 0;
  const std::function<nn::Model<float>()> make = [&] {
    ++trained;
    return nn::Model<float>::from_spec(nn::smallcnn_spec(dims), 10, 1);
  };
  const auto s = eval::injection_rate_study<float>(splits.train, splits.test, trig, 5, cfg, make);
  ASSERT_EQ(s.points.size(), 2u);
  EXPECT_EQ(s.axis, "injection-rate");
  EXPECT_DOUBLE_EQ(s.points[0].value, 20.0 / 200.0);
  EXPECT_DOUBLE_EQ(s.points[1].value, 32.0 / 200.0);
  EXPECT_EQ(s.points[0].report.provenance.at("mode"), "common-backdoor");
  EXPECT_EQ(s.points[1].report.provenance.at("mode"), "fc-backdoor");
  EXPECT_EQ(trained, 2);
  const auto again = eval::injection_rate_study<float>(splits.train, splits.test, trig, 5, cfg, make);
  EXPECT_EQ(trained, 2);  // both points reloaded from disk
  EXPECT_EQ(again, s);
}

}  // namespace
}  // namespace crbd
