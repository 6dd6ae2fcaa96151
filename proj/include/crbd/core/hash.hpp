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

#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace crbd {

/// Incremental 64-bit FNV-1a. Used for provenance hashes, not for security.
class Fnv1a {
 public:
  Fnv1a& update(std::span<const std::byte> bytes) {
    for (auto b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 1099511628211ull;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) { return update(std::as_bytes(std::span(s.data(), s.size()))); }
  template <class T, std::size_t E>
  Fnv1a& update_values(std::span<T, E> values) {
    return update(std::as_bytes(values));
  }

  [[nodiscard]] std::uint64_t digest() const { return state_; }
  [[nodiscard]] std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t state_ = 1469598103934665603ull;
};

inline std::string hash_hex(std::string_view s) { return Fnv1a{}.update(s).hex(); }

}  // namespace crbd
