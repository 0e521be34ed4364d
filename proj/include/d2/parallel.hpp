#pragma once

#include <cstddef>
#include <exception>
#include <vector>

namespace d2 {

// OpenMP loop over [0, n) that carries exceptions out of the parallel
// region. When several iterations throw, the lowest index wins, so the
// reported error does not depend on thread timing.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace d2
