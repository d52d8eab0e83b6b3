#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace umg {

#ifdef UMG_REAL32
using real = float;
#else
using real = double;
#endif

// Tolerances paired with the scalar width of the build.
constexpr real kGradCheckTol = sizeof(real) == 8 ? real(1e-4) : real(1e-3);

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or size disagreement between operands.
struct DimError : Error {
    using Error::Error;
};

/// NaN/Inf appeared, or a domain precondition (e.g. log of non-positive) failed.
struct NumericError : Error {
    using Error::Error;
};

/// Invalid argument value or configuration.
struct ValueError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Global worker count for batch-level parallelism. Results are bitwise
// independent of this setting: work is partitioned per item and reductions
// always run in item order.
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [0, n). Items must write to disjoint state.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace umg
