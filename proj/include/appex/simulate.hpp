#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "appex/linalg.hpp"
#include "appex/parallel.hpp"
#include "appex/rng.hpp"
#include "appex/sde_model.hpp"

namespace appex {

/// M discrete paths over N times, stored snapshot-major: states[i] is the
/// M x d matrix of all paths at times[i], row j belonging to path j.
struct TrajectorySet {
    std::vector<double> times;
    std::vector<Matrix> states;
    std::optional<Vector> weights;

    int dim() const { return states.empty() ? 0 : static_cast<int>(states.front().cols()); }
    Eigen::Index n_paths() const { return states.empty() ? 0 : states.front().rows(); }
    std::size_t n_times() const { return times.size(); }
};

struct Snapshot {
    double time = 0.0;
    Matrix samples;  // M_i x d
};

/// Ordered temporal snapshots with no cross-time correspondence. This is
/// the only observable the estimation pipeline may consume.
struct MarginalDataset {
    std::vector<Snapshot> snapshots;

    int dim() const {
        return snapshots.empty() ? 0 : static_cast<int>(snapshots.front().samples.cols());
    }

    void validate() const {
        if (snapshots.empty()) throw DimensionError("MarginalDataset: no snapshots");
        for (std::size_t i = 0; i < snapshots.size(); ++i) {
            if (snapshots[i].samples.rows() < 2)
                throw DimensionError("MarginalDataset: snapshot " + std::to_string(i) +
                                     " has fewer than 2 samples");
            if (snapshots[i].samples.cols() != snapshots.front().samples.cols())
                throw DimensionError("MarginalDataset: snapshot dimensions differ");
            require_finite(snapshots[i].samples, "MarginalDataset snapshot");
            if (i > 0 && !(snapshots[i].time > snapshots[i - 1].time))
                throw AlignmentError("MarginalDataset: times must be strictly increasing");
        }
    }

    /// Common spacing of the snapshot grid; uniformity is required by the
    /// estimators and checked here to relative 1e-6.
    double uniform_dt() const {
        if (snapshots.size() < 2)
            throw AlignmentError("MarginalDataset: need at least 2 snapshots");
        const double dt = snapshots[1].time - snapshots[0].time;
        for (std::size_t i = 2; i < snapshots.size(); ++i) {
            const double step = snapshots[i].time - snapshots[i - 1].time;
            if (std::abs(step - dt) > 1e-6 * std::max(std::abs(dt), 1e-300))
                throw AlignmentError("MarginalDataset: snapshot times are not uniformly "
                                     "spaced (step " + std::to_string(step) + " vs " +
                                     std::to_string(dt) + ")");
        }
        return dt;
    }
};

/// Euler-Maruyama simulation X_{k+1} = X_k + A X_k dt + G sqrt(dt) xi.
/// Path j starts at an i.i.d. draw from p0 and owns the substream
/// (seed, j), so the result is independent of worker scheduling. When no
/// noise factor is stored, the symmetric PSD square root of H is used.
inline TrajectorySet euler_maruyama(const SdeParams& params, const InitialDistribution& p0,
                                    double dt_em, int n_steps, int n_paths,
                                    std::uint64_t seed, unsigned workers = 1) {
    if (!(dt_em > 0.0)) throw NumericError("euler_maruyama: dt_em must be positive");
    if (n_steps < 1) throw DimensionError("euler_maruyama: n_steps must be >= 1");
    if (n_paths < 1) throw DimensionError("euler_maruyama: n_paths must be >= 1");
    if (p0.dim() != params.dim())
        throw DimensionError("euler_maruyama: initial distribution dimension differs "
                             "from the SDE dimension");

    const int d = params.dim();
    const Matrix factor = params.noise_factor ? *params.noise_factor
                                              : psd_sqrt(params.diffusion);
    const Eigen::Index m = factor.cols();
    const double sqrt_dt = std::sqrt(dt_em);

    TrajectorySet out;
    out.times.resize(static_cast<std::size_t>(n_steps) + 1);
    for (int k = 0; k <= n_steps; ++k) out.times[static_cast<std::size_t>(k)] = k * dt_em;
    out.states.assign(out.times.size(), Matrix(n_paths, d));

    std::vector<std::size_t> diverged(static_cast<std::size_t>(n_paths), 0);
    parallel_for(static_cast<std::size_t>(n_paths), workers, [&](std::size_t j) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
        Vector x = p0.sample(rng);
        Vector noise(m);
        out.states[0].row(static_cast<Eigen::Index>(j)) = x.transpose();
        for (int k = 0; k < n_steps; ++k) {
            for (Eigen::Index l = 0; l < m; ++l) noise[l] = rng.normal();
            x += params.drift * x * dt_em + factor * noise * sqrt_dt;
            if (!x.allFinite()) {
                diverged[j] = static_cast<std::size_t>(k) + 1;
                return;
            }
            out.states[static_cast<std::size_t>(k) + 1].row(static_cast<Eigen::Index>(j)) =
                x.transpose();
        }
    });
    for (std::size_t j = 0; j < diverged.size(); ++j)
        if (diverged[j] != 0)
            throw DivergenceError("euler_maruyama: path " + std::to_string(j) +
                                  " became non-finite at step " + std::to_string(diverged[j]),
                                  diverged[j]);
    return out;
}

/// Slices a trajectory set down to marginals at t = 0, dt_obs, ...,
/// (n_marginals-1) dt_obs and independently permutes the rows of every
/// snapshot, destroying path identity. dt_obs must be an integer multiple
/// of the trajectory step.
inline MarginalDataset subsample_marginals(const TrajectorySet& traj, double dt_obs,
                                           int n_marginals, std::uint64_t shuffle_seed) {
    if (traj.n_times() < 2) throw DimensionError("subsample_marginals: trajectory too short");
    if (n_marginals < 1) throw DimensionError("subsample_marginals: n_marginals must be >= 1");
    const double dt_em = traj.times[1] - traj.times[0];
    const double ratio = dt_obs / dt_em;
    const long stride = std::lround(ratio);
    if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * std::max(1.0, ratio))
        throw AlignmentError("subsample_marginals: dt_obs is not an integer multiple of "
                             "the trajectory step");
    const std::size_t last = static_cast<std::size_t>(stride) *
                             static_cast<std::size_t>(n_marginals - 1);
    if (last >= traj.n_times())
        throw AlignmentError("subsample_marginals: requested times exceed the trajectory range");

    MarginalDataset out;
    out.snapshots.reserve(static_cast<std::size_t>(n_marginals));
    for (int i = 0; i < n_marginals; ++i) {
        const std::size_t idx = static_cast<std::size_t>(stride) * static_cast<std::size_t>(i);
        const Matrix& src = traj.states[idx];
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(src.rows()));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(i)));
        for (std::size_t r = perm.size() - 1; r > 0; --r)
            std::swap(perm[r], perm[static_cast<std::size_t>(
                                   rng.uniform_int(0, static_cast<long>(r)))]);
        Matrix shuffled(src.rows(), src.cols());
        for (std::size_t r = 0; r < perm.size(); ++r)
            shuffled.row(static_cast<Eigen::Index>(r)) = src.row(perm[r]);
        out.snapshots.push_back(Snapshot{traj.times[idx], std::move(shuffled)});
    }
    return out;
}

}  // namespace appex
