#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dsa {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{0};
  return n;
}
}  // namespace detail

inline void set_threads(int n) { detail::thread_setting() = n; }

inline int thread_count() {
  int n = detail::thread_setting();
  if (n > 0) return n;
  if (const char* env = std::getenv("DSA_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Static contiguous chunks; f(i) must only write slot i, so results do not
// depend on the thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  int nt = std::min<std::size_t>(thread_count(), n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  std::size_t chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// Pairwise sum with a topology fixed by n alone.
template <class T, class Get>
T tree_reduce(std::size_t lo, std::size_t hi, Get&& get) {
  if (hi - lo == 1) return get(lo);
  std::size_t mid = lo + (hi - lo) / 2;
  T a = tree_reduce<T>(lo, mid, get);
  a += tree_reduce<T>(mid, hi, get);
  return a;
}

}  // namespace dsa
