#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace weakcorr {

/// Worker count: WEAKCORR_THREADS env var if set, else hardware concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("WEAKCORR_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Run `work(batch_index)` for batch_index in [0, n_batches). Batches are
/// claimed dynamically, but each batch's result must be written only to
/// batch-indexed storage so that aggregation order (and hence the aggregate,
/// reduced in index order by the caller) is independent of scheduling.
inline void parallel_batches(int n_batches, const std::function<void(int)>& work) {
  const int n_threads = std::min(thread_count(), n_batches);
  if (n_threads <= 1) {
    for (int b = 0; b < n_batches; ++b) work(b);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const int b = next.fetch_add(1);
        if (b >= n_batches) return;
        work(b);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace weakcorr
