#pragma once

#include <cstddef>
#include <functional>

namespace scoreid {

/// Worker cap used by parallel_for; 0 means hardware concurrency.
void set_max_jobs(int jobs);
int max_jobs();

/// Runs fn(i) for i in [0, n). Callers write results into slot i so output
/// never depends on scheduling. If several calls throw, the exception from the
/// lowest index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace scoreid
