#pragma once

#include <cstddef>
#include <functional>

namespace geoflow::util {

/// Worker count: GEOFLOW_THREADS if set to a positive integer, otherwise the hardware
/// concurrency (at least 1).
unsigned worker_count();

/// Calls fn(i) for i in [0, n) across up to worker_count() threads. Work is split into
/// contiguous blocks, so callers that write results by index get identical output for
/// any thread count. The first exception thrown by any item is rethrown after all
/// workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace geoflow::util
