#include "augsub/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace augsub {

int thread_count() {
  static const int cached = [] {
    const char* env = std::getenv("AUGSUB_THREADS");
    if (env == nullptr || *env == '\0') {
      return 1;
    }
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      return 1;
    }
    return static_cast<int>(std::min(v, 64L));
  }();
  return cached;
}

void parallel_for(std::int64_t n, int workers,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) {
    return;
  }
  const std::int64_t t = std::min<std::int64_t>(std::max(workers, 1), n);
  if (t == 1) {
    fn(0, n);
    return;
  }
  // Chunk boundaries depend only on n and t, never on scheduling.
  const std::int64_t chunk = (n + t - 1) / t;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t - 1));
  for (std::int64_t w = 1; w < t; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    if (lo < hi) {
      pool.emplace_back(fn, lo, hi);
    }
  }
  fn(0, std::min(n, chunk));
  for (auto& th : pool) {
    th.join();
  }
}

}  // namespace augsub
