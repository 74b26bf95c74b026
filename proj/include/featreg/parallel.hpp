#pragma once

#include <cstddef>
#include <functional>

namespace featreg {

/// Worker count: FEATREG_THREADS if set (capped by the hardware/OpenMP limit),
/// otherwise the OpenMP default. Always >= 1.
int worker_count();

/// Override the worker count for this process (0 restores the default).
void set_worker_count(int n);

/// Run body(i) for i in [0, n). Iterations must write disjoint outputs; any
/// reduction is done by the caller in index order so results do not depend
/// on the worker count.
void parallel_for(std::ptrdiff_t n, const std::function<void(std::ptrdiff_t)>& body);

}  // namespace featreg
