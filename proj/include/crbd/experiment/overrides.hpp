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
/// Command-line flags layered over a manifest. Flags always win; each value
/// that differs from the manifest produces a warning naming both values.

#pragma once

#include <string>
#include <vector>

#include "crbd/experiment/manifest.hpp"

namespace crbd::experiment {

struct FlagOverride {
  std::string flag;   // e.g. "--epochs"
  std::string path;   // dotted manifest path, e.g. "train.epochs"
  json value;
};

/// Parses `key=value` (value as JSON when it parses, otherwise a string).
inline FlagOverride parse_set_flag(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
  FlagOverride o{"--set " + kv.substr(0, eq), kv.substr(0, eq), {}};
  const std::string v = kv.substr(eq + 1);
  try {
    o.value = json::parse(v);
  } catch (const json::parse_error&) {
    o.value = v;
  }
  return o;
}

inline json::json_pointer dotted_pointer(const std::string& path) {
  std::string p;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    p += "/" + path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return json::json_pointer(p);
}

/// Returns the manifest with every override applied (re-validated). A flag
/// also removes the same field from per-run override blocks so it takes
/// effect in every run.
inline ExperimentManifest apply_overrides(const ExperimentManifest& m, const std::vector<FlagOverride>& overrides,
                                          std::vector<std::string>* warnings = nullptr) {
  json j = m.to_json();
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  for (const auto& o : overrides) {
    const auto ptr = dotted_pointer(o.path);
    if (!j.contains(ptr.parent_pointer()) || !j.at(ptr.parent_pointer()).is_object())
      throw ValidationError({o.flag + ": '" + o.path + "' is not a manifest field"});
    if (j.contains(ptr) && j.at(ptr) != o.value)
      warn("flag " + o.flag + "=" + o.value.dump() + " overrides manifest " + o.path + "=" + j.at(ptr).dump());
    j[ptr] = o.value;
    const auto dot = o.path.find('.');
    if (dot == std::string::npos) continue;
    const std::string block = o.path.substr(0, dot);
    if (block != "train" && block != "poison" && block != "fc" && block != "model") continue;
    const auto sub = dotted_pointer(block + "." + o.path.substr(dot + 1));
    for (auto& r : j.at("runs")) {
      auto& ov = r.at("overrides");
      if (!ov.contains(sub)) continue;
      warn("flag " + o.flag + " also replaces run '" + r.at("name").get<std::string>() + "' override " + o.path + "=" +
           ov.at(sub).dump());
      ov.at(sub.parent_pointer()).erase(sub.back());
      if (ov.at(block).empty()) ov.erase(block);
    }
  }
  auto out = ExperimentManifest::from_json(j);
  out.base_dir = m.base_dir;
  return out;
}

}  // namespace crbd::experiment
