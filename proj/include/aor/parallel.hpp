#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace aor {

/// Runs fn(0..n_chunks-1). The chunk decomposition is fixed by the caller, so
/// results that are reduced in chunk order do not depend on the thread count;
/// threads <= 1 degenerates to a plain serial loop.
template <class Fn>
void parallel_chunks(int n_chunks, int threads, Fn&& fn) {
  if (threads <= 1 || n_chunks <= 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const int n_workers = std::min(threads, n_chunks);
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w) {
    pool.emplace_back([&] {
      try {
        for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) fn(c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_chunks);
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace aor
