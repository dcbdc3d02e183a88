#pragma once

#include <cstddef>
#include <functional>

namespace lip2us {

// Worker count used by parallel_for. Defaults to LIP2US_THREADS when set,
// otherwise 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Calls fn(i) for i in [0, n). Work is split into contiguous static chunks, so
// callers that write only to index-owned outputs get results independent of
// the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lip2us
