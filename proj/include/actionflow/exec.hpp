#pragma once

// Execution policy shared by every data-parallel kernel. Serial is the
// reference path used by tests; Parallel runs the OpenMP variant.

namespace actionflow {

enum class Exec { Serial, Parallel };

/// Number of worker threads the parallel kernels will use.
int parallel_threads();

}  // namespace actionflow

#if defined(_OPENMP)
#define AF_STR(s) #s
#define AF_OMP(directive) _Pragma(AF_STR(omp directive))
#else
#define AF_OMP(directive)
#endif

#include <cstddef>

namespace actionflow {

/// Runs body(i) for i in [0, n). Iterations must be independent.
template <class Body>
void for_each_index(Exec exec, std::size_t n, Body&& body) {
  const auto count = static_cast<std::ptrdiff_t>(n);
  if (exec == Exec::Parallel) {
    AF_OMP(parallel for schedule(static))
    for (std::ptrdiff_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::ptrdiff_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
  }
}

}  // namespace actionflow
