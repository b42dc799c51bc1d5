#pragma once

#include <cstddef>
#include <functional>

namespace c4 {

/// Worker threads to use: C4_THREADS when set to a positive integer,
/// otherwise the hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
/// write results into per-index slots so the outcome does not depend on
/// scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace c4
