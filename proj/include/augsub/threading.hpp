#pragma once

#include <cstdint>
#include <functional>

namespace augsub {

// Worker count for data-parallel kernels. Reads AUGSUB_THREADS once per
// process; unset, empty or unparsable means 1. Clamped to [1, 64].
int thread_count();

// Runs fn over [0, n) split into contiguous chunks, one per worker.
// Workers must write disjoint outputs; given that, results are identical
// for every worker count because each index is computed independently.
void parallel_for(std::int64_t n, int workers,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

inline void parallel_for(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
  parallel_for(n, thread_count(), fn);
}

}  // namespace augsub
