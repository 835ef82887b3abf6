#pragma once

// Index-parallel loop with static contiguous chunking. Every index is
// processed exactly once and writes only its own outputs, so results do not
// depend on the thread count.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rbdsde {

/// Process-wide worker count; 0 means hardware concurrency.
void set_thread_count(unsigned threads);
unsigned thread_count();

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(thread_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error;
  std::size_t first_index = count;
  std::mutex guard;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      const std::size_t lo = count * t / workers, hi = count * (t + 1) / workers;
      for (std::size_t i = lo; i < hi; ++i) {
        try {
          fn(i);
        } catch (...) {
          // Keep the error from the smallest index so failures are reproducible.
          std::lock_guard lock(guard);
          if (i < first_index) {
            first_index = i;
            first_error = std::current_exception();
          }
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rbdsde
