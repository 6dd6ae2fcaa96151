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

// End-to-end library walk-through on the synthetic dataset: trigger ->
// poison plan -> feature-consistency training -> TA/ASR/ASR_bc.
//
//   crbd_quickstart [n_train] [epochs]

#include <cstdio>
#include <cstdlib>

#include "crbd/data/dataset.hpp"
#include "crbd/eval/metrics.hpp"
#include "crbd/nn/zoo.hpp"
#include "crbd/poison/plan.hpp"
#include "crbd/train/trainer.hpp"
#include "crbd/trigger/trigger.hpp"

int main(int argc, char** argv) {
  using namespace crbd;
  const std::size_t n_train = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 2000;
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 4;
  const int y_t = 5;

  const auto data = data::make_synthetic(n_train, 500, /*seed=*/1);
  const auto trig = trigger::make_gaussian_trigger(data.train.dims, 0.5, 0.2, /*seed=*/7);

  // 8% injection rate: half normal backdoor instances, half compressed copies.
  const int n_b = static_cast<int>(n_train * 8 / 100 / 4);
  const std::vector<poison::CodecCount> per_codec = {{codec::CompressionSpec::jpeg(), n_b},
                                                     {codec::CompressionSpec::jpeg2000(), n_b},
                                                     {codec::CompressionSpec::webp(), n_b}};
  const auto plan = poison::build_plan(data.train, trig, y_t, n_b, per_codec, /*seed=*/3);
  const auto poisoned = poison::materialize(plan, data.train, trig);
  std::printf("poisoned set: %zu clean + %zu backdoor + %zu compressed (IR %.2f%%)\n", poisoned.clean.size(),
              poisoned.backdoor.size(), poisoned.compressed.size(),
              100.0 * poison::injection_rate(plan, data.train.size()));

  auto model = nn::build_model<float>("smallcnn", 10, /*seed=*/11);
  train::TrainConfig tc;
  tc.epochs = epochs;
  tc.schedule = tc.schedule.scaled(train::LrSchedule::kReferenceEpochs, epochs);
  tc.batch_size = 64;
  tc.seed = 5;
  train::FCConfig fc;
  fc.selector = model.default_selector();
  train::train(model, poisoned, tc, fc, [](const train::EpochRecord& e) {
    std::printf("epoch %d  lr %.4f  loss %.4f  (fc %.4f)\n", e.epoch + 1, e.lr, e.loss_total, e.loss_fc);
  });

  const auto report = eval::evaluate(model, data.test, trig, y_t,
                                     {codec::CompressionSpec::jpeg(), codec::CompressionSpec::jpeg2000(),
                                      codec::CompressionSpec::webp()});
  std::printf("TA %.4f  ASR %.4f\n", report.ta->value(), report.asr->value());
  for (const auto& [tag, f] : report.asr_bc) std::printf("ASR_%s %.4f (%lld/%lld)\n", tag.c_str(), f.value(),
                                                          static_cast<long long>(f.num), static_cast<long long>(f.den));
  return 0;
}
