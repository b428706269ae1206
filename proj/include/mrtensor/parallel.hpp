#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mrtensor {

// Worker cap: MRTENSOR_THREADS if set and positive, otherwise the hardware
// concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("MRTENSOR_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, count). Each call must write a disjoint slice of
// the output so the result does not depend on scheduling. When several jobs
// throw, the exception of the lowest index is rethrown.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_per_worker = 1) {
  const std::size_t workers =
      std::min(worker_count(), count / std::max<std::size_t>(1, min_per_worker));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mrtensor
