// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace orchard {

/// Process-wide worker count used by parallel_for. 0 selects the hardware
/// concurrency. Results never depend on this value: reductions are split into
/// a fixed number of blocks that are combined in block order.
void set_thread_count(int n);
int thread_count();

/// Calls body(begin, end) over disjoint sub-ranges covering [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

/// Deterministic blocked reduction: [0, n) is cut into `blocks` contiguous
/// blocks (independent of the thread count), each mapped to a partial T, and the
/// partials are folded left-to-right with `combine`.
template <class T, class Map, class Combine>
T blocked_reduce(std::size_t n, std::size_t blocks, T init, Map&& map, Combine&& combine) {
  if (n == 0) return init;
  if (blocks == 0) blocks = 1;
  if (blocks > n) blocks = n;
  std::vector<T> partial(blocks, init);
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t lo = n * b / blocks;
      const std::size_t hi = n * (b + 1) / blocks;
      partial[b] = map(lo, hi);
    }
  });
  T acc = init;
  for (auto& p : partial) acc = combine(acc, p);
  return acc;
}

}  // namespace orchard
