#pragma once

#include <cstdint>
#include <functional>

namespace dkn {

// Internal parallelism. Work is split into contiguous index ranges and every
// output element is computed in full by exactly one thread, so results are
// bit-identical for any thread count (including 1). The `DKN_THREADS`
// environment variable caps the pool size; set_thread_count overrides it at
// runtime.
namespace threading {

int thread_count();
void set_thread_count(int n);

// Invokes fn(begin, end) on disjoint subranges covering [0, n).
// Runs inline when n < min_parallel or when called from inside a worker.
void parallel_for(std::int64_t n, std::int64_t min_parallel,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

inline void parallel_for(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
  parallel_for(n, 2, fn);
}

}  // namespace threading
}  // namespace dkn
