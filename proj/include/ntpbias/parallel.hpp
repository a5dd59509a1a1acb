#pragma once

#include <cstddef>
#include <functional>

namespace ntpbias {

/// Worker cap from NTP_BIAS_THREADS (default 1, never below 1).
int worker_count();

/// Runs body(chunk) for chunk in [0, num_chunks) on up to `workers` threads.
/// Callers own one output slot per chunk and reduce them in chunk order afterwards, so results
/// do not depend on the worker count.
void parallel_chunks(std::size_t num_chunks, int workers, const std::function<void(std::size_t)>& body);

}  // namespace ntpbias
