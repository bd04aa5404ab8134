#pragma once

#include <cstddef>
#include <functional>

namespace erpreg {

// Runs fn(i) for i in [0, n) across a small thread pool. Work items must be
// independent; callers guarantee determinism by seeding per item, so the
// result is identical for any worker count (including 1).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int n_threads = 0);

}  // namespace erpreg
