// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace gridpinn {

/// Resolves a requested thread count; 0 means one per hardware thread.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls body(i) for i in [0, n). Work item i always runs on worker
/// i % threads, so per-item results never depend on scheduling. The first
/// exception (by item order within each worker, lowest worker first) is
/// rethrown after all workers finish.
template <typename Body>
void parallel_for(long n, int threads, Body&& body) {
  threads = std::max(1, std::min<int>(resolve_threads(threads), static_cast<int>(std::max(1L, n))));
  if (threads == 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (long i = w; i < n; i += threads) body(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace gridpinn
