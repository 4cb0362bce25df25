#pragma once

#include <cstdlib>
#include <string>

#ifdef GFCN_HAVE_OPENMP
#include <omp.h>
#endif

#include "gfcn/tensor.hpp"

namespace gfcn {

/// Worker count for data-parallel loops, read once from GFCN_THREADS (default 1).
inline int thread_count() {
  static const int count = [] {
    const char* env = std::getenv("GFCN_THREADS");
    if (env == nullptr) return 1;
    try {
      int n = std::stoi(env);
      return n < 1 ? 1 : n;
    } catch (...) {
      return 1;
    }
  }();
  return count;
}

/// Runs fn(i) for i in [0, n). Iterations must write disjoint memory; any
/// cross-iteration reduction is left to the caller so summation order stays fixed.
template <typename Fn>
void parallel_for(Index n, Fn&& fn) {
#ifdef GFCN_HAVE_OPENMP
  const int threads = thread_count();
  if (threads > 1 && n > 1) {
#pragma omp parallel for num_threads(threads) schedule(static)
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (Index i = 0; i < n; ++i) fn(i);
}

}  // namespace gfcn
