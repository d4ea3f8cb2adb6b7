#ifndef MFMETA_PARALLEL_HPP
#define MFMETA_PARALLEL_HPP

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mfmeta {

// Runs f(i) for i in [0, n).  Work is claimed dynamically; results must be
// written to per-index slots so the outcome does not depend on scheduling.
template <class F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  int t = std::min(threads, n);
  for (int k = 0; k < t; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace mfmeta

#endif
