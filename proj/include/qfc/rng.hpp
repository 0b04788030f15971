// Copyright 2026 The qfc Authors
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

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace qfc {

/// Philox4x32-10 counter-based generator. Every draw is a pure function of
/// (seed, trajectory, step, stream), so ensembles are reproducible under any
/// execution order or worker count.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  static constexpr Block generate(Block ctr, std::array<std::uint32_t, 2> key) noexcept {
    for (int r = 0; r < 10; ++r) {
      ctr = round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  constexpr explicit Philox(std::uint64_t seed) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  constexpr Block block(std::uint64_t trajectory, std::uint32_t step, std::uint32_t stream) const noexcept {
    return generate({static_cast<std::uint32_t>(trajectory), static_cast<std::uint32_t>(trajectory >> 32), step,
                     stream},
                    key_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform(std::uint64_t trajectory, std::uint32_t step, std::uint32_t stream) const noexcept {
    const Block b = block(trajectory, step, stream);
    return to_unit(b[0], b[1]);
  }

  /// Standard normal via Box–Muller on one counter block.
  double normal(std::uint64_t trajectory, std::uint32_t step, std::uint32_t stream) const noexcept {
    const Block b = block(trajectory, step, stream);
    const double u1 = 1.0 - to_unit(b[0], b[1]);  // (0, 1]
    const double u2 = to_unit(b[2], b[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Block round(const Block& c, const std::array<std::uint32_t, 2>& k) noexcept {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
  }

  static constexpr double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
  }

  std::array<std::uint32_t, 2> key_;
};

}  // namespace qfc
