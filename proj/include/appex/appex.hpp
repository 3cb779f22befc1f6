#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "appex/aeot.hpp"
#include "appex/estimators.hpp"
#include "appex/sde_model.hpp"
#include "appex/simulate.hpp"

namespace appex {

enum class EstimationSource { coupling_moments, sampled_paths };

struct AppexConfig {
    int n_iters = 30;
    double sigma0_sq = 0.0;  // initial isotropic diffusion guess; must be set > 0

    /// Unset: exact kernel for d = 1, linearized for d >= 2.
    std::optional<KernelScheme> kernel_scheme;

    /// coupling_moments uses the expectation-form estimators directly;
    /// sampled_paths draws trajectories by Markov concatenation first.
    EstimationSource estimation_source = EstimationSource::coupling_moments;
    int n_sampled_paths = 500;

    /// Unset: per-pair choice (log domain for d >= 2 or on kernel underflow).
    std::optional<SinkhornMode> sinkhorn_mode;
    double sinkhorn_tol = 1e-5;
    int sinkhorn_max_iter = 20000;

    double lam_rel = 1e-6;
    double stop_tol = 0.0;  // relative parameter change; 0 keeps all n_iters
    std::uint64_t seed = 0;
    unsigned workers = 1;

    /// Extension hook for non-linear drift families: replaces the built-in
    /// closed-form drift update when set.
    std::function<Matrix(const MleInput&)> drift_estimator;
};

struct IterationRecord {
    int iter = 0;  // 1-based
    Matrix drift;
    PsdMatrix diffusion = PsdMatrix::zero(1);
    double nll = 0.0;
    std::vector<double> sinkhorn_residuals;
    double wall_seconds = 0.0;
};

struct AppexResult {
    Matrix drift;
    PsdMatrix diffusion = PsdMatrix::zero(1);
    std::vector<IterationRecord> history;
};

/// Negative mean Gaussian transition log-likelihood of the inferred joint
/// distribution under (drift, diffusion), with the linearized kernel; the
/// finite-sample stand-in for the relative entropy the alternating scheme
/// drives down. The diffusion is regularized by lam_rel before inversion.
inline double nll_diagnostic(const MleInput& input, const Matrix& drift,
                             const PsdMatrix& diffusion, double lam_rel) {
    const int d = input.dim();
    if (drift.rows() != d || diffusion.dim() != d)
        throw DimensionError("nll_diagnostic: parameter dimensions do not match the data");
    const double lambda = lam_rel * diffusion.mat().trace() / static_cast<double>(d);
    Eigen::SelfAdjointEigenSolver<Matrix> es(diffusion.mat());
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver failed on the diffusion matrix");
    const Vector vals = es.eigenvalues().array() + lambda;
    if (vals.minCoeff() <= 1e-12 * std::max(vals.maxCoeff(), 1e-300))
        throw SingularityError("nll_diagnostic: diffusion is singular; pass lam_rel > 0");
    const Matrix inv = es.eigenvectors() * vals.cwiseInverse().asDiagonal() *
                       es.eigenvectors().transpose();
    const double log_det = vals.array().log().sum();

    double quad = 0.0;
    for (const auto& m : input.intervals)
        quad += (inv * m.residual_moment(drift)).trace();
    const double n_int = static_cast<double>(input.intervals.size());
    return 0.5 * d * std::log(2.0 * M_PI * input.dt) + 0.5 * log_det +
           quad / (2.0 * input.dt * n_int);
}

namespace detail {

inline MleInput collect_input(const MarginalDataset& data,
                              const std::vector<Coupling>& couplings, double dt,
                              const AppexConfig& config, int iter) {
    if (config.estimation_source == EstimationSource::coupling_moments) {
        std::vector<CouplingMoments> moments;
        moments.reserve(couplings.size());
        for (std::size_t i = 0; i < couplings.size(); ++i)
            moments.push_back(coupling_moments(couplings[i], data.snapshots[i].samples,
                                               data.snapshots[i + 1].samples, dt));
        return MleInput::from_moments(std::move(moments), dt);
    }
    std::vector<double> times;
    std::vector<Matrix> snaps;
    for (const auto& s : data.snapshots) {
        times.push_back(s.time);
        snaps.push_back(s.samples);
    }
    const TrajectorySet traj =
        sample_paths(times, snaps, couplings, config.n_sampled_paths,
                     derive_seed(config.seed, 0xa1e0u + static_cast<std::uint64_t>(iter)));
    return MleInput::from_trajectories(traj);
}

}  // namespace detail

/// The alternating estimation loop: starting from A = 0, H = sigma0_sq I,
/// each iteration infers couplings for all adjacent snapshot pairs under
/// the current reference kernel (the Schroedinger-bridge step, solved by
/// Sinkhorn), then refits drift and diffusion by closed-form MLE. The
/// first iteration, whose reference is isotropic Brownian motion, is
/// exactly the WOT baseline.
inline AppexResult run_appex(const MarginalDataset& data, const AppexConfig& config) {
    data.validate();
    const double dt = data.uniform_dt();
    const int d = data.dim();
    if (config.n_iters < 1) throw DimensionError("run_appex: n_iters must be >= 1");
    if (!(config.sigma0_sq > 0.0))
        throw NumericError("run_appex: sigma0_sq must be positive");

    const KernelScheme scheme = config.kernel_scheme.value_or(
        d == 1 ? KernelScheme::exact : KernelScheme::linearized);

    SinkhornOptions opts;
    opts.tol = config.sinkhorn_tol;
    opts.max_iter = config.sinkhorn_max_iter;
    const bool auto_mode = !config.sinkhorn_mode.has_value();
    if (!auto_mode) opts.mode = *config.sinkhorn_mode;

    Matrix drift = Matrix::Zero(d, d);
    PsdMatrix diffusion(config.sigma0_sq * Matrix::Identity(d, d));
    std::vector<Potentials> warm(data.snapshots.size() - 1);

    AppexResult result;
    result.history.reserve(static_cast<std::size_t>(config.n_iters));
    for (int iter = 1; iter <= config.n_iters; ++iter) {
        const auto started = std::chrono::steady_clock::now();
        const SdeParams reference(drift, diffusion);
        const TransitionKernel kernel = reference_kernel(reference, dt, scheme);

        std::vector<Coupling> couplings;
        try {
            couplings = solve_adjacent(data, kernel, config.lam_rel, opts, &warm,
                                       config.workers, auto_mode);
        } catch (const NonConvergenceError& e) {
            throw NonConvergenceError("iteration " + std::to_string(iter) + ", " + e.what(),
                                      e.residual);
        }

        const MleInput input = detail::collect_input(data, couplings, dt, config, iter);

        const Matrix previous_drift = drift;
        const Matrix previous_diffusion = diffusion.mat();
        if (config.drift_estimator) {
            drift = config.drift_estimator(input);
            diffusion = mle_diffusion(input, drift);
        } else if (d == 1) {
            // Exact OU estimators; the linearized forms are the fallback
            // when the log argument is out of range.
            try {
                const double a = mle_drift_exact_1d(input);
                const double s2 = mle_diffusion_exact_1d(input, a);
                drift = Matrix::Constant(1, 1, a);
                diffusion = PsdMatrix(Matrix::Constant(1, 1, s2));
            } catch (const EstimatorRangeError&) {
                drift = mle_drift(input);
                diffusion = mle_diffusion(input, drift);
            }
        } else {
            drift = mle_drift(input);
            diffusion = mle_diffusion(input, drift);
        }

        IterationRecord record;
        record.iter = iter;
        record.drift = drift;
        record.diffusion = diffusion;
        record.nll = nll_diagnostic(input, drift, diffusion, config.lam_rel);
        record.sinkhorn_residuals.reserve(couplings.size());
        for (const auto& c : couplings) record.sinkhorn_residuals.push_back(c.residual);
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.history.push_back(std::move(record));

        if (config.stop_tol > 0.0 && iter > 1) {
            const double scale = std::max(
                {1.0, drift.cwiseAbs().maxCoeff(), diffusion.mat().cwiseAbs().maxCoeff()});
            const double change =
                std::max((drift - previous_drift).cwiseAbs().maxCoeff(),
                         (diffusion.mat() - previous_diffusion).cwiseAbs().maxCoeff());
            if (change / scale <= config.stop_tol) break;
        }
    }
    result.drift = drift;
    result.diffusion = diffusion;
    return result;
}

}  // namespace appex
