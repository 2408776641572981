#pragma once

#include <cstddef>
#include <functional>

namespace alab {

/// Worker count: hardware concurrency, capped by AMORTIZE_LAB_THREADS.
std::size_t worker_count();

/// Runs fn(i) for i in [0, count) on up to worker_count() threads. Each index
/// runs exactly once; callers write results into per-index slots so the
/// outcome never depends on scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace alab
