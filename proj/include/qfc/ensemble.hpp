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

#include <algorithm>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace qfc {

/// Trajectories per reduction block. Blocks are reduced in index order, so
/// floating-point sums do not depend on the worker count.
inline constexpr std::size_t kEnsembleBlock = 64;

/// Runs `work(index, acc)` for index 0..count-1 and returns the merged
/// accumulator. `make()` yields an empty accumulator; `merge(into, from)`
/// combines two.
template <class Acc, class Make, class Work, class Merge>
Acc run_ensemble(std::size_t count, std::size_t threads, Make make, Work work, Merge merge) {
  const std::size_t nblocks = (count + kEnsembleBlock - 1) / kEnsembleBlock;
  std::vector<std::optional<Acc>> blocks(nblocks);
  std::vector<std::exception_ptr> errors(nblocks);
  auto run_block = [&](std::size_t b) {
    try {
      Acc acc = make();
      const std::size_t end = std::min(count, (b + 1) * kEnsembleBlock);
      for (std::size_t i = b * kEnsembleBlock; i < end; ++i) work(i, acc);
      blocks[b].emplace(std::move(acc));
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, nblocks));
  if (threads == 1) {
    for (std::size_t b = 0; b < nblocks; ++b) run_block(b);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t b = w; b < nblocks; b += threads) run_block(b);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  Acc total = make();
  for (auto& b : blocks) merge(total, *b);
  return total;
}

}  // namespace qfc
