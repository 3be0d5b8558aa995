#pragma once

#include <cstddef>
#include <functional>

namespace cpgd {

// Worker cap: CPGD_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for every i in [begin, end) on up to `workers` threads.
// Each index is visited exactly once; callers must write to disjoint outputs.
// workers == 0 means worker_count().
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace cpgd
