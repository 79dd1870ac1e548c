#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace panelcf {

/// Caps worker threads used by parallel loops. 0 restores the default
/// (hardware concurrency).
void set_thread_limit(unsigned threads);
unsigned thread_limit();

/// Runs body(i) for i in [0, n). Tasks must write only to their own slot;
/// the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Seed for task `task` derived from `master`; independent of scheduling.
std::uint64_t task_seed(std::uint64_t master, std::uint64_t task);

}  // namespace panelcf
