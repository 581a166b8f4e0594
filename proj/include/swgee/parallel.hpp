#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace swgee::detail {

/// Run body(k) for k in [0, count) across up to `threads` workers, pulling
/// indices from a shared counter. The first exception wins: it stops the
/// dispatch and is rethrown on the calling thread after all workers join, so
/// callers see the same error surface as a serial loop.
inline void parallel_for(int count, int threads,
                         const std::function<void(int)>& body) {
  if (count <= 0) return;
  const int workers = std::max(1, std::min(threads, count));
  if (workers == 1) {
    for (int k = 0; k < count; ++k) body(k);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= count) return;
      try {
        body(k);
      } catch (...) {
        {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(run);
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace swgee::detail
