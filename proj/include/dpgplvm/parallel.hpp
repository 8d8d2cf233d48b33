#ifndef DPGPLVM_PARALLEL_HPP_
#define DPGPLVM_PARALLEL_HPP_

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dpgplvm {

namespace detail {

inline std::atomic<unsigned> &thread_setting() {
  static std::atomic<unsigned> count = [] {
    if (const char *env = std::getenv("DPGPLVM_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0)
        return static_cast<unsigned>(v);
    }
    return 1u;
  }();
  return count;
}

} // namespace detail

/// Worker count: set_thread_count if called, else DPGPLVM_THREADS if set and
/// positive, else 1.
inline unsigned thread_count() { return detail::thread_setting().load(); }

/// Overrides the worker count for subsequent calls; 0 is treated as 1.
inline void set_thread_count(unsigned n) {
  detail::thread_setting().store(std::max(n, 1u));
}

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker;
/// callers write results into per-index slots and reduce afterwards, so the
/// outcome does not depend on the worker count.
template <typename Body> void parallel_for(std::size_t n, Body &&body) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure)
          failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w)
    pool.emplace_back(run);
  run();
  pool.clear();
  if (failure)
    std::rethrow_exception(failure);
}

} // namespace dpgplvm

#endif // DPGPLVM_PARALLEL_HPP_
