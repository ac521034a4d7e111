#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace beamkam {

namespace detail {
inline std::atomic<int>& thread_override()
{
  static std::atomic<int> n{0};
  return n;
}
inline bool& inside_worker()
{
  thread_local bool flag = false;
  return flag;
}
} // namespace detail

/** @brief Set the worker count; 0 restores the BEAMKAM_THREADS / serial default. */
inline void set_num_threads(int n) { detail::thread_override() = std::max(0, n); }

inline int num_threads()
{
  int n = detail::thread_override();
  if (n > 0) return n;
  if (const char* env = std::getenv("BEAMKAM_THREADS")) {
    try {
      int v = std::stoi(env);
      if (v > 0) return v;
    } catch (...) {
    }
  }
  return 1;
}

/**
 * @brief Static-chunked parallel loop over [0,n).
 *
 * Each index is processed exactly once and callers write results into
 * pre-sized slots, so output never depends on the worker count.  Nested
 * calls from inside a worker run serially.
 */
template <class F>
void parallel_for(std::size_t n, F&& f)
{
  int nt = num_threads();
  if (n == 0) return;
  if (nt <= 1 || n == 1 || detail::inside_worker()) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(nt, n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      detail::inside_worker() = true;
      std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
      detail::inside_worker() = false;
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

} // namespace beamkam
