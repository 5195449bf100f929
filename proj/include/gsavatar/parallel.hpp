#pragma once

// Static-partition parallel loops. The worker count comes from the
// GSAVATAR_THREADS environment variable (default: hardware concurrency).

#include <cstddef>
#include <functional>

namespace gsavatar {

std::size_t worker_count();
/// Overrides the environment for the rest of the process (0 restores it).
void set_worker_count(std::size_t n);

/// Calls body(i) for i in [0, n). Iterations must not share mutable state.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gsavatar
