#pragma once

#include <cstddef>
#include <functional>

namespace inflare {

// Worker cap: INFLARE_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs task(i) for i in [0, n_tasks) on up to worker_count() threads. Tasks must
// write only to their own output slots; callers reduce slots in index order so
// results do not depend on the thread count. The first exception thrown by any
// task is rethrown after all workers join.
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& task);

}  // namespace inflare
