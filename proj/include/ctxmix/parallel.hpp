#pragma once

#include <cstddef>
#include <functional>

namespace ctxmix {

// Worker count: CTXMIX_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Callers write
// results into pre-sized slots so output order never depends on scheduling.
// The exception from the lowest failing index is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace ctxmix
