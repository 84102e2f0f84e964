#pragma once

#include <cstddef>
#include <functional>

namespace icbir {

// Resolves the effective worker count: explicit request > ICBIR_THREADS env
// var > hardware concurrency.  A request of 0 means "auto".
int resolve_thread_count(int requested);

// Runs fn over [0, count) split into contiguous chunks, one per worker.
//
// Contract for callers: chunks must be independent — each index writes only
// its own outputs and performs no cross-index accumulation.  Under that
// contract the result is identical for any worker count, which is what makes
// --threads a pure throughput knob.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t begin, std::size_t end)>& fn);

}  // namespace icbir
