#pragma once

#include <cstddef>
#include <functional>

namespace d2d {

// Number of worker threads used by parallel_for. Defaults to the hardware
// concurrency; D2D_THREADS in the environment overrides it.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across worker threads. Work is handed out in
// index order; callers write results into slot i so the outcome does not
// depend on the thread count. Exceptions from fn are rethrown (first by index).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace d2d
