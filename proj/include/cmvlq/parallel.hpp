#pragma once

#include <cstddef>
#include <functional>

namespace cmvlq {

/// Worker cap from CMVLQ_THREADS (0 or unset: hardware concurrency).
int worker_count();

/// Runs fn(begin, end) over a static partition of [0, n). Chunks write
/// disjoint outputs, so results never depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace cmvlq
