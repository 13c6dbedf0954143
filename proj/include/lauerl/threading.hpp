#pragma once

#include <functional>

namespace lauerl {

// Worker count: min(hardware_concurrency, LAUERL_THREADS when set), >= 1.
int worker_count();

// Splits [0, n) into worker_count() contiguous chunks and runs them on
// separate threads. Chunk boundaries depend only on n and the worker count,
// so per-chunk accumulations reduced in chunk order are reproducible.
void parallel_for(int n, const std::function<void(int begin, int end, int chunk)>& fn);

}  // namespace lauerl
