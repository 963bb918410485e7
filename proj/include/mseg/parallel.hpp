#pragma once

#include <cstdint>
#include <functional>

namespace mseg {

/// Worker count used by the kernels. 1 (the default) runs everything on the
/// calling thread. Kernels only split work over independent outputs, so
/// results are bit-identical for every thread count.
void set_num_threads(int n);
int num_threads();

/// Calls fn(begin, end) over disjoint chunks of [0, n). `grain` is the
/// minimum chunk length worth handing to another thread.
void parallel_for(std::int64_t n, std::int64_t grain,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace mseg
