// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace focalfuse {

namespace detail {
inline std::atomic<int>& thread_budget() {
  static std::atomic<int> n{1};
  return n;
}
}  // namespace detail

/// Upper bound on worker threads used by the kernels. Results never depend on it:
/// work is only split across independent output elements.
inline void set_num_threads(int n) { detail::thread_budget() = std::max(1, n); }
inline int num_threads() { return detail::thread_budget(); }

/// Runs fn(begin, end) over [0, count) split into contiguous chunks.
template <class Fn>
void parallel_for(std::int64_t count, std::int64_t min_chunk, Fn&& fn) {
  const int budget = num_threads();
  const std::int64_t chunks =
      std::min<std::int64_t>(budget, std::max<std::int64_t>(1, count / std::max<std::int64_t>(1, min_chunk)));
  if (chunks <= 1) {
    if (count > 0) fn(std::int64_t{0}, count);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
  const std::int64_t step = (count + chunks - 1) / chunks;
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t b = c * step;
    const std::int64_t e = std::min(count, b + step);
    if (b >= e) break;
    workers.emplace_back([&, b, e, c] {
      try {
        fn(b, e);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace focalfuse
