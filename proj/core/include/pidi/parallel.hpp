#pragma once

#include <cstddef>
#include <functional>

namespace pidi {

/// Caps the worker count used by kernels. 0 restores the default, which is
/// PIDI_THREADS when set, otherwise the hardware concurrency.
void set_num_threads(int threads);
int num_threads();

/// Runs fn over contiguous sub-ranges of [0, count). Every index is visited
/// exactly once by one call; kernels that write disjoint outputs per index
/// therefore produce identical results for any thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace pidi
