#ifndef HJBCTL_PARALLEL_HPP_
#define HJBCTL_PARALLEL_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>

namespace hjbctl {

// Worker count used by parallel_for. Defaults to HJBCTL_WORKERS when set,
// otherwise std::thread::hardware_concurrency().
std::size_t worker_count();
void set_worker_count(std::size_t n);

// Runs fn(i) for i in [0, n). Each index is processed exactly once; callers
// write results into per-index slots so reductions stay ordered and the
// outcome does not depend on the worker count. The first exception thrown
// by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Deterministic 64-bit seed derivation (splitmix64 over the inputs).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace hjbctl

#endif  // HJBCTL_PARALLEL_HPP_
