#pragma once

#include <functional>

namespace ecco {

// Number of workers: min(hardware, ECCO_THREADS) with a floor of 1.
int worker_count();

// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs; the
// final result is then independent of the worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace ecco
