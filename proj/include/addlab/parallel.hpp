#ifndef ADDLAB_PARALLEL_HPP
#define ADDLAB_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace addlab {

/// Process-wide worker count. 0 means "use hardware concurrency".
/// The CLI sets this from --workers / ADDLAB_WORKERS.
void set_worker_count(unsigned n);
unsigned worker_count();

/// Runs fn(i) for i in [0, n) across the configured workers. Each index is
/// handled exactly once; callers own any cross-index reduction order, so the
/// worker count never changes results.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace addlab

#endif
