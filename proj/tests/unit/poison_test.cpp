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

#include <set>

#include "crbd/poison/plan.hpp"
#include "support/fixtures.hpp"

namespace crbd {
namespace {

using codec::CompressionSpec;
using poison::CodecCount;

const std::vector<CodecCount> kThreeCodecs(int n) {
  return {{CompressionSpec::jpeg(), n}, {CompressionSpec::jpeg2000(), n}, {CompressionSpec::webp(), n}};
}

TEST(BuildPlan, FullScaleCountsGiveEightPercent) {
  // 50,000 tiny images stand in for the full training split.
  const auto ds = testing::labeled_fixture(50000, 10, {1, 2, 2});
  const auto trig = trigger::make_gaussian_trigger(ds.dims, 0.5, 0.1, 7);
  const auto plan = poison::build_plan(ds, trig, 5, 1000, kThreeCodecs(1000), 0);
  EXPECT_EQ(plan.size(), 4000u);
  EXPECT_EQ(plan.n_normal, 1000);
  EXPECT_EQ(plan.compressed_total(), 3000u);
  EXPECT_DOUBLE_EQ(poison::injection_rate(plan, ds.size()), 0.08);
  for (int id : plan.source_ids) EXPECT_NE(ds.labels[static_cast<std::size_t>(id)], 5);
}

TEST(BuildPlan, EmptyPerCodecIsCommonBackdoor) {
  const auto ds = testing::labeled_fixture(200, 10, {3, 8, 8});
  const auto trig = trigger::make_gaussian_trigger(ds.dims, 0.5, 0.1, 7);
  const auto plan = poison::build_plan(ds, trig, 5, 40, {}, 1);
  EXPECT_TRUE(plan.pairing.empty());
  EXPECT_EQ(plan.size(), 40u);
}

TEST(BuildPlan, DeterministicParentSubset) {
  const auto ds = testing::labeled_fixture(1500, 10, {1, 2, 2});
  const auto trig = trigger::make_gaussian_trigger(ds.dims, 0.5, 0.1, 7);
  const std::vector<CodecCount> pc{{CompressionSpec::jpeg(), 100}};
  const auto a = poison::build_plan(ds, trig, 5, 1000, pc, 42);
  const auto b = poison::build_plan(ds, trig, 5, 1000, pc, 42);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.pairing.size(), 100u);
  std::set<int> parents;
  for (const auto& l : a.pairing) {
    EXPECT_GE(l.backdoor_id, 0);
    EXPECT_LT(l.backdoor_id, 1000);
    parents.insert(l.backdoor_id);
  }
  EXPECT_EQ(parents.size(), 100u);  // distinct parents
  const auto c = poison::build_plan(ds, trig, 5, 1000, pc, 43);
  EXPECT_NE(a.source_ids, c.source_ids);
}

TEST(BuildPlan, CapacityAndParameterErrors) {
  const auto ds = testing::labeled_fixture(100, 10, {1, 2, 2});
  const auto trig = trigger::make_gaussian_trigger(ds.dims, 0.5, 0.1, 7);
  EXPECT_THROW(poison::build_plan(ds, trig, 5, 10, {{CompressionSpec::jpeg(), 11}}, 0), CapacityError);
  EXPECT_THROW(poison::build_plan(ds, trig, 5, 91, {}, 0), CapacityError);  // only 90 non-target images
  EXPECT_THROW(poison::build_plan(ds, trig, 5, 0, {}, 0), ParameterError);
  EXPECT_THROW(poison::build_plan(ds, trig, 10, 5, {}, 0), ParameterError);
  EXPECT_THROW(poison::build_plan(ds, trig, 5, 5, {{CompressionSpec::jpeg(), 1}, {CompressionSpec::jpeg(), 1}}, 0),
               ParameterError);
  const auto other = trigger::make_gaussian_trigger({3, 2, 2}, 0.5, 0.1, 7);
  EXPECT_THROW(poison::build_plan(ds, other, 5, 5, {}, 0), ParameterError);
}

TEST(BuildPlan, JsonRoundTrip) {
  const auto ds = testing::labeled_fixture(300, 10, {1, 2, 2});
  const auto trig = trigger::make_gaussian_trigger(ds.dims, 0.5, 0.1, 7);
  const auto plan = poison::build_plan(ds, trig, 5, 50, kThreeCodecs(20), 9);
  EXPECT_EQ(nlohmann::json(plan).get<poison::PoisonPlan>(), plan);
}

class Materialize : public ::testing::Test {
 protected:
  data::LabeledImages ds_ = testing::labeled_fixture(300, 10, {3, 32, 32});
  trigger::TriggerPattern trig_ = trigger::make_gaussian_trigger(ds_.dims, 0.5, 0.2, 7);
  poison::PoisonPlan plan_ = poison::build_plan(ds_, trig_, 5, 30,
                                                {{CompressionSpec::jpeg(), 10},
                                                 {CompressionSpec::jpeg2000(), 12},
                                                 {CompressionSpec::webp(), 30}},
                                                3);
  poison::PoisonedDataset pd_ = poison::materialize(plan_, ds_, trig_);
};

TEST_F(Materialize, CompressedEqualsCompressOfParent) {
  ASSERT_EQ(pd_.compressed.size(), plan_.pairing.size());
  for (const auto& l : plan_.pairing) {
    const auto& parent = pd_.backdoor[static_cast<std::size_t>(l.backdoor_id)];
    EXPECT_EQ(pd_.compressed[static_cast<std::size_t>(l.compressed_id)], codec::compress(parent, l.spec));
    // The parent is the stamped source image itself.
    const int src = plan_.source_ids[static_cast<std::size_t>(l.backdoor_id)];
    const Image stamped = trigger::stamp(ds_.images[static_cast<std::size_t>(src)], trig_);
    for (std::size_t i = 0; i < stamped.size(); ++i)
      EXPECT_NEAR(parent.pixels()[i], stamped.pixels()[i], 1.0 / 65535.0);
  }
}

TEST_F(Materialize, SplitsAndCounts) {
  std::set<int> sources(plan_.source_ids.begin(), plan_.source_ids.end());
  EXPECT_EQ(pd_.clean.size(), ds_.size() - sources.size());
  EXPECT_EQ(pd_.backdoor.size(), 30u);
  EXPECT_EQ(pd_.poisoned_count(), plan_.size());
  EXPECT_EQ(pd_.train_size(), ds_.size() + plan_.compressed_total());
  EXPECT_EQ(pd_.target_label(), 5);
  // Clean split is disjoint from the poison sources and keeps true labels.
  for (std::size_t i = 0; i < pd_.clean.size(); ++i) {
    const int id = pd_.clean_ids[i];
    EXPECT_FALSE(sources.contains(id));
    EXPECT_EQ(pd_.clean.labels[i], ds_.labels[static_cast<std::size_t>(id)]);
  }
  // Splitting by spec recovers the per-codec counts.
  for (const auto& c : plan_.per_codec)
    EXPECT_EQ(pd_.compressed_ids_for(c.spec).size(), static_cast<std::size_t>(c.count));
  // Each compressed id maps to exactly one (parent, spec) link.
  std::set<int> ids;
  for (const auto& l : plan_.pairing) ids.insert(l.compressed_id);
  EXPECT_EQ(ids.size(), plan_.pairing.size());
}

TEST_F(Materialize, WrongTriggerIsContractError) {
  const auto other = trigger::make_gaussian_trigger(ds_.dims, 0.5, 0.2, 8);
  EXPECT_THROW(poison::materialize(plan_, ds_, other), ContractError);
}

TEST_F(Materialize, PersistedLayoutRoundTrips) {
  const auto dir = testing::scratch_dir("poisoned");
  poison::save_poisoned(pd_, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "clean"));
  EXPECT_TRUE(std::filesystem::exists(dir / "poison" / "jpeg-q50"));
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const auto back = poison::load_poisoned(dir);
  EXPECT_EQ(back.plan, pd_.plan);
  EXPECT_EQ(back.clean.labels, pd_.clean.labels);
  EXPECT_EQ(back.clean_ids, pd_.clean_ids);
  EXPECT_EQ(back.backdoor, pd_.backdoor);
  EXPECT_EQ(back.compressed, pd_.compressed);
  EXPECT_EQ(back.clean.images, pd_.clean.images);
}

TEST(InjectionRate, ReferenceValues) {
  EXPECT_DOUBLE_EQ(poison::injection_rate(4000, 50000), 0.08);
  EXPECT_DOUBLE_EQ(poison::injection_rate(1300, 50000), 0.026);
  EXPECT_DOUBLE_EQ(poison::injection_rate(0, 50000), 0.0);
  EXPECT_THROW(poison::injection_rate(0, 0), ParameterError);
  EXPECT_THROW(poison::injection_rate(10, 5), ParameterError);
}

}  // namespace
}  // namespace crbd
