#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace edenn {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}
}  // namespace detail

/// Caps intra-op parallelism. Every op partitions work so that each output
/// element is reduced by exactly one thread in a fixed order, so results do
/// not depend on this setting.
inline void set_num_threads(int n) { detail::thread_cap() = std::max(1, n); }
inline int num_threads() { return detail::thread_cap(); }

/// Runs fn(begin, end) over [0, n) split into contiguous chunks. Small jobs
/// (below `grain` items per thread) stay on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t grain, Fn&& fn) {
  const auto cap = static_cast<std::size_t>(num_threads());
  const std::size_t workers = std::min(cap, grain ? n / grain : n);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace edenn
