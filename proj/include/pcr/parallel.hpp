#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace pcr {

/// Worker count used by parallel kernels and the benchmark runner.
/// Capped by the PCR_THREADS environment variable; defaults to the
/// hardware concurrency.
inline int thread_count() {
  static const int cached = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("PCR_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) return std::min(hw, cap);
    }
    return hw;
  }();
  return cached;
}

/// Runs fn(begin, end) over contiguous chunks of [0, n).
///
/// Chunk boundaries depend only on n and the worker count, and every index
/// is processed by exactly one worker, so results are identical to a
/// sequential loop whenever fn writes only to its own index range.
inline void parallel_for(std::ptrdiff_t n,
                         const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn) {
  if (n <= 0) return;
  const int workers = std::min<std::ptrdiff_t>(thread_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  const std::ptrdiff_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) {
    const std::ptrdiff_t b = w * chunk;
    const std::ptrdiff_t e = std::min<std::ptrdiff_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, b, e);
  }
  fn(0, std::min<std::ptrdiff_t>(n, chunk));
  for (auto& t : pool) t.join();
}

} // namespace pcr
