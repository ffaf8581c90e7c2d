#ifndef PPDE_PARALLEL_H
#define PPDE_PARALLEL_H

#include <cstddef>
#include <functional>

namespace ppde {

// Upper bound on worker threads used by library loops; 0 means hardware
// concurrency. Results never depend on this value.
void set_max_threads(unsigned n);
unsigned max_threads();

// Runs fn(i) for i in [0, n). Each index is executed exactly once; callers
// write results into per-index slots and reduce in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ppde

#endif  // PPDE_PARALLEL_H
