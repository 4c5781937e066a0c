#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace lddmm {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> value{0};
  return value;
}
}  // namespace detail

/// Number of worker threads used by pairwise reductions. 0 selects hardware concurrency.
inline void set_thread_count(unsigned threads) { detail::thread_setting().store(threads); }

inline unsigned thread_count() {
  const unsigned requested = detail::thread_setting().load();
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

// Splits [0, n) into contiguous chunks and calls body(begin, end) for each.
// Every output row is produced by exactly one call, so results do not depend on
// the thread count.
template <class Body>
void parallel_for(Eigen::Index n, Body&& body, Eigen::Index min_chunk = 64) {
  const auto threads = static_cast<Eigen::Index>(thread_count());
  const Eigen::Index chunks = std::min(threads, std::max<Eigen::Index>(1, n / min_chunk));
  if (chunks <= 1) {
    body(Eigen::Index{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks - 1));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&](Eigen::Index c) {
    const Eigen::Index lo = n * c / chunks;
    const Eigen::Index hi = n * (c + 1) / chunks;
    try {
      body(lo, hi);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  for (Eigen::Index c = 1; c < chunks; ++c) pool.emplace_back(run, c);
  run(0);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail
}  // namespace lddmm
