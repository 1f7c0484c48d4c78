#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace nec {

/// Worker count: `requested` if positive, else NEC_LAB_THREADS, else the
/// hardware concurrency (at least 1).
int resolve_threads(int requested);

/// Runs body(i) for i in [0, n) on up to `threads` workers. Indices are
/// handed out in order; the first exception is rethrown after all workers
/// stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

/// Results in index order regardless of scheduling.
template <class R, class F>
std::vector<R> parallel_map(std::size_t n, int threads, F&& fn) {
  std::vector<R> out(n);
  parallel_for(n, threads, [&](std::size_t i) { out[i] = fn(i); });
  return out;
}

}  // namespace nec
