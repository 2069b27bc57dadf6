#pragma once

#include <cstddef>
#include <functional>

namespace pimms {

/// Worker cap: PIMMS_THREADS when set (>= 1), else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Callers write
/// results by index, so output never depends on scheduling. The first
/// exception thrown by any worker is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pimms
