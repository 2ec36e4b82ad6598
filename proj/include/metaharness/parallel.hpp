#pragma once

#include <atomic>
#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace metaharness {

inline int effective_jobs(int jobs) {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Evaluates fn(0..n-1) on a bounded worker pool and delivers results to sink
// strictly in index order, so output bytes never depend on scheduling. The
// first exception cancels outstanding work and is rethrown on the caller.
template <typename T>
void run_ordered(std::size_t n, int jobs,
                 const std::function<T(std::size_t)>& fn,
                 const std::function<void(std::size_t, T&&)>& sink) {
  if (n == 0) return;
  const int workers = std::min<std::size_t>(static_cast<std::size_t>(effective_jobs(jobs)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) sink(i, fn(i));
    return;
  }

  std::mutex mu;
  std::vector<std::optional<T>> results(n);
  std::size_t next_emit = 0;
  std::atomic<std::size_t> next_index{0};
  std::exception_ptr error;
  std::atomic<bool> cancelled{false};

  auto worker = [&]() {
    while (!cancelled.load()) {
      const std::size_t i = next_index.fetch_add(1);
      if (i >= n) return;
      try {
        T value = fn(i);
        std::lock_guard<std::mutex> lock(mu);
        results[i] = std::move(value);
        while (next_emit < n && results[next_emit].has_value()) {
          sink(next_emit, std::move(*results[next_emit]));
          results[next_emit].reset();
          ++next_emit;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        cancelled.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace metaharness
