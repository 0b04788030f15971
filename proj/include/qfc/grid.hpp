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

#include <cmath>
#include <cstddef>
#include <vector>

#include "qfc/error.hpp"

namespace qfc {

/// Uniform grid t_k = k * dt, k = 0..steps. The horizon must be an integer
/// multiple of dt up to rounding.
struct TimeGrid {
  double dt = 0.0;
  std::size_t steps = 0;

  static TimeGrid make(double horizon, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorKind::InvalidArgument, "dt must be positive");
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
      throw Error(ErrorKind::InvalidArgument, "horizon must be non-negative");
    const double ratio = horizon / dt;
    const double k = std::round(ratio);
    if (std::abs(ratio - k) > 1e-9 * std::max(1.0, ratio))
      throw Error(ErrorKind::GridMismatch, "horizon is not an integer multiple of dt");
    return {dt, static_cast<std::size_t>(k)};
  }

  double time(std::size_t k) const noexcept { return static_cast<double>(k) * dt; }
  double horizon() const noexcept { return time(steps); }
  std::size_t points() const noexcept { return steps + 1; }

  std::vector<double> times() const {
    std::vector<double> t(points());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = time(k);
    return t;
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

}  // namespace qfc
