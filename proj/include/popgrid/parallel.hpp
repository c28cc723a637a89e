#pragma once

#include <cstddef>
#include <functional>

namespace popgrid {

// Worker count: POPGRID_THREADS when set to a positive integer, otherwise the
// hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) across worker threads in contiguous chunks. Each
// index must write only its own output slot; callers reduce afterwards in index
// order so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace popgrid
