#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "appex/aeot.hpp"
#include "appex/linalg.hpp"
#include "appex/simulate.hpp"

namespace appex {

/// Sufficient statistics for the closed-form MLE updates: per-interval
/// coupling moments over a uniformly spaced grid. Trajectory input is
/// reduced to the identical moment form (path averages), so both routes
/// share one code path.
struct MleInput {
    std::vector<CouplingMoments> intervals;
    double dt = 0.0;

    static MleInput from_moments(std::vector<CouplingMoments> moments, double dt) {
        if (moments.empty()) throw DimensionError("MleInput: need at least one interval");
        if (!(dt > 0.0)) throw NumericError("MleInput: dt must be positive");
        return MleInput{std::move(moments), dt};
    }

    static MleInput from_trajectories(const TrajectorySet& traj) {
        if (traj.n_times() < 2)
            throw DimensionError("MleInput: need at least two snapshot times");
        if (traj.n_paths() < 1) throw DimensionError("MleInput: no paths");
        const double dt = traj.times[1] - traj.times[0];
        if (!(dt > 0.0)) throw NumericError("MleInput: dt must be positive");
        for (std::size_t i = 2; i < traj.n_times(); ++i)
            if (std::abs((traj.times[i] - traj.times[i - 1]) - dt) > 1e-6 * dt)
                throw AlignmentError("MleInput: the MLE assumes equally spaced times; "
                                     "resample the trajectory onto a uniform grid");
        const double inv_m = 1.0 / static_cast<double>(traj.n_paths());
        std::vector<CouplingMoments> moments;
        moments.reserve(traj.n_times() - 1);
        for (std::size_t i = 0; i + 1 < traj.n_times(); ++i) {
            const Matrix& x = traj.states[i];
            const Matrix& y = traj.states[i + 1];
            CouplingMoments m;
            m.exx = inv_m * (x.transpose() * x);
            m.eyx = inv_m * (y.transpose() * x);
            m.eyy = inv_m * (y.transpose() * y);
            m.dt = dt;
            moments.push_back(std::move(m));
        }
        return MleInput{std::move(moments), dt};
    }

    int dim() const { return static_cast<int>(intervals.front().exx.rows()); }
};

/// Maximum-likelihood drift of the linearized transition model,
/// A = (1/dt) [sum E[dX X^T]] [sum E[X X^T]]^{-1}, pooled over intervals.
/// The estimate does not involve the diffusion.
inline Matrix mle_drift(const MleInput& input) {
    const int d = input.dim();
    Matrix sdx = Matrix::Zero(d, d);
    Matrix sxx = Matrix::Zero(d, d);
    for (const auto& m : input.intervals) {
        sdx += m.drift_cross();
        sxx += m.exx;
    }
    sxx = ((sxx + sxx.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(sxx, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver failed on the pooled second-moment matrix");
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo >= 1e12)
        throw RankDeficiencyError(
            "pooled second-moment matrix is rank deficient; the data do not excite all "
            "directions (use a spanning initial distribution)");
    return sxx.ldlt().solve(sdx.transpose()).transpose() / input.dt;
}

/// Maximum-likelihood diffusion given the drift:
/// H = (1/T) sum_i E[r r^T], r = dX - A X dt, T = (#intervals) dt.
/// Tiny negative eigenvalues from floating-point noise are clipped to zero.
inline PsdMatrix mle_diffusion(const MleInput& input, const Matrix& drift) {
    const int d = input.dim();
    if (drift.rows() != d || drift.cols() != d)
        throw DimensionError("mle_diffusion: drift dimension does not match the data");
    Matrix acc = Matrix::Zero(d, d);
    for (const auto& m : input.intervals) acc += m.residual_moment(drift);
    const double horizon = static_cast<double>(input.intervals.size()) * input.dt;
    acc = ((acc + acc.transpose()) / (2.0 * horizon)).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(acc);
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver failed on the residual moment matrix");
    const Matrix clipped = es.eigenvectors() *
                           es.eigenvalues().cwiseMax(0.0).asDiagonal() *
                           es.eigenvectors().transpose();
    return PsdMatrix((clipped + clipped.transpose()) / 2.0);
}

/// Exact 1-d drift MLE under the exact OU transition kernel:
/// a = (1/dt) log( sum E[X_{i+1} X_i] / sum E[X_i^2] ).
inline double mle_drift_exact_1d(const MleInput& input) {
    if (input.dim() != 1)
        throw DimensionError("mle_drift_exact_1d: input is not 1-dimensional");
    double num = 0.0, den = 0.0;
    for (const auto& m : input.intervals) {
        num += m.eyx(0, 0);
        den += m.exx(0, 0);
    }
    if (!(num > 0.0) || !(den > 0.0))
        throw EstimatorRangeError("exact 1-d drift estimator inapplicable: log argument "
                                  "is not positive (fall back to the linearized form)");
    return std::log(num / den) / input.dt;
}

/// Exact 1-d diffusion MLE given the drift:
/// sigma^2 = (1/T) sum_i E[(X_{i+1} - e^{a dt} X_i)^2].
inline double mle_diffusion_exact_1d(const MleInput& input, double drift) {
    if (input.dim() != 1)
        throw DimensionError("mle_diffusion_exact_1d: input is not 1-dimensional");
    const double phi = std::exp(drift * input.dt);
    double acc = 0.0;
    for (const auto& m : input.intervals)
        acc += m.eyy(0, 0) - 2.0 * phi * m.eyx(0, 0) + phi * phi * m.exx(0, 0);
    const double horizon = static_cast<double>(input.intervals.size()) * input.dt;
    return std::max(acc / horizon, 0.0);
}

}  // namespace appex
