#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace appex {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape mismatch or non-square input where a square matrix is required.
struct DimensionError : Error {
    using Error::Error;
};

/// Non-finite values or an eigensolver that failed to converge.
struct NumericError : Error {
    using Error::Error;
};

/// Inverting a singular matrix without regularization.
struct SingularityError : Error {
    using Error::Error;
};

/// Iterative solver hit its iteration cap with an unacceptable residual.
struct NonConvergenceError : Error {
    NonConvergenceError(const std::string& what, double residual_)
        : Error(what), residual(residual_) {}
    double residual;
};

/// Simulation produced a non-finite state.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, std::size_t step_)
        : Error(what), step(step_) {}
    std::size_t step;
};

/// Observation grid is not an integer multiple of the simulation grid,
/// or snapshot times are not uniformly spaced where required.
struct AlignmentError : Error {
    using Error::Error;
};

/// Rejection sampling exceeded its draw budget.
struct GenerationError : Error {
    using Error::Error;
};

/// Pooled second-moment matrix is numerically rank deficient.
struct RankDeficiencyError : Error {
    using Error::Error;
};

/// Exact 1-d estimator cannot be applied (non-positive log argument).
struct EstimatorRangeError : Error {
    using Error::Error;
};

/// A coupling row carries no mass, so conditional sampling is undefined.
struct DegenerateCouplingError : Error {
    using Error::Error;
};

/// Statistic undefined for the given input (e.g. correlation with constant truth).
struct StatisticsError : Error {
    using Error::Error;
};

/// Malformed file contents (CSV/JSON parsing and schema violations).
struct FormatError : Error {
    using Error::Error;
};

}  // namespace appex
