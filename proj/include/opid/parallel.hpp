#pragma once

#include <exception>
#include <vector>

#include <omp.h>

namespace opid {

/// Serial is the reference path kept for testing; Parallel spreads
/// independent work items over OpenMP threads. Both produce identical
/// results because every item writes only to its own slot.
enum class Execution { Serial, Parallel };

/// 0 selects the OpenMP default.
inline void set_thread_count(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

inline int thread_count() { return omp_get_max_threads(); }

/// Runs body(i) for i in [0, n). Exceptions are collected per index and the
/// one with the smallest index is rethrown, so failures are reported the
/// same way under both policies.
template <class Body>
void parallel_for(int n, Execution exec, Body&& body) {
  if (n <= 0) return;
  if (exec == Execution::Serial || n == 1 || omp_in_parallel()) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace opid
