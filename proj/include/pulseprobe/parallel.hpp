#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pulseprobe {

namespace detail {
inline int& thread_setting() {
  static int threads = 1;
  return threads;
}
}  // namespace detail

/// Worker count used by every parallel loop in the library (the CLI --threads flag).
inline void set_threads(int n) { detail::thread_setting() = n < 1 ? 1 : n; }
inline int thread_count() { return detail::thread_setting(); }

/// Static-schedule loop over [0, n). Bodies must only write to index-owned storage;
/// reductions are done afterwards in index order so results never depend on the
/// thread count. If bodies throw, the exception of the lowest index is rethrown.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
#ifdef _OPENMP
  const int threads = thread_count();
  if (threads > 1 && n > 1) {
    std::vector<std::exception_ptr> errors(n);
    const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (long long i = 0; i < count; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace pulseprobe
