#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace bfkit {

// Worker count: BFKIT_THREADS when set to a positive integer, else the
// hardware concurrency (at least 1).
[[nodiscard]] inline std::size_t thread_count() {
  if (const char *env = std::getenv("BFKIT_THREADS"); env != nullptr) {
    try {
      const auto n = std::stoul(env);
      if (n > 0) {
        return n;
      }
    } catch (const std::exception &) {
      // fall through to the hardware default
    }
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

// Calls f(i) for i in [0, n). Results must be written by index so the output
// does not depend on scheduling. The first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, F &&f, std::size_t threads = thread_count()) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      f(i);
    }
    return;
  }
  std::exception_ptr error;
  std::mutex mtx;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) {
        try {
          f(i);
        } catch (...) {
          const std::lock_guard lock(mtx);
          if (!error) {
            error = std::current_exception();
          }
          return;
        }
      }
    });
  }
  for (auto &th : pool) {
    th.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

}  // namespace bfkit
