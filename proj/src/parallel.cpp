#include "featreg/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace featreg {
namespace {

int g_override = 0;

int hardware_limit() {
#ifdef _OPENMP
  return std::max(1, omp_get_max_threads());
#else
  return 1;
#endif
}

}  // namespace

int worker_count() {
  if (g_override > 0) return g_override;
  int n = hardware_limit();
  if (const char* env = std::getenv("FEATREG_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, cap);
    } catch (...) {
      // unparsable values are ignored
    }
  }
  return n;
}

void set_worker_count(int n) { g_override = std::max(0, n); }

void parallel_for(std::ptrdiff_t n, const std::function<void(std::ptrdiff_t)>& body) {
#ifdef _OPENMP
  const int workers = worker_count();
  if (workers > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(workers)
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
}

}  // namespace featreg
