#pragma once

#include <cstddef>
#include <functional>

namespace lsnet {

/// Worker count used by kernels. Defaults to 1; LSNET_DETERMINISTIC=1 pins it to 1.
int thread_count();
void set_thread_count(int threads);

/// Runs fn(i) for i in [0, count). Each index must write a disjoint output region,
/// so results do not depend on the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace lsnet
