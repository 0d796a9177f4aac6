#pragma once

#include <cstddef>
#include <functional>

namespace exitlab {

// Worker count: MX_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, n) on up to `workers` threads. Indices are
// claimed from a shared counter, so bodies must only write to slots owned
// by their index. The first exception thrown is rethrown after all workers
// join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, std::size_t workers = 0);

}  // namespace exitlab
