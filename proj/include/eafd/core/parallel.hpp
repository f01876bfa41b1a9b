#pragma once

#include <cstddef>
#include <functional>

namespace eafd {

/// Runs body(i) for i in [0, n) over at most `workers` threads using static
/// contiguous chunks. Callers write results at index i only, so output does
/// not depend on the worker count. The first exception thrown is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

/// Process-wide default worker cap (the CLI's --workers).
int default_workers() noexcept;
void set_default_workers(int workers) noexcept;

}  // namespace eafd
