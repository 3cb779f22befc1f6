#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "appex/errors.hpp"
#include "appex/linalg.hpp"
#include "appex/parallel.hpp"
#include "appex/rng.hpp"
#include "appex/sde_model.hpp"
#include "appex/simulate.hpp"

namespace appex {

/// Entropic-OT coupling between two adjacent empirical marginals:
/// plan(j, k) is the inferred joint mass on (x_j, y_k).
struct Coupling {
    Matrix plan;
    Vector row_marginal;
    Vector col_marginal;
    bool converged = false;
    double residual = 0.0;  // L1 marginal violation at termination
    int iterations = 0;

    double marginal_violation() const {
        const double row = (plan.rowwise().sum() - row_marginal).cwiseAbs().sum();
        const double col = (plan.colwise().sum().transpose() - col_marginal).cwiseAbs().sum();
        return std::max(row, col);
    }
};

enum class SinkhornMode { standard, log_domain };

struct SinkhornOptions {
    SinkhornMode mode = SinkhornMode::log_domain;
    double tol = 1e-8;   // L1 marginal violation
    int max_iter = 5000;
};

/// Dual potentials in log space; reusable to warm-start a related solve.
struct Potentials {
    Vector f;
    Vector g;
};

/// Half squared Mahalanobis transport cost under the reference kernel:
/// C(j, k) = 1/2 (y_k - Phi x_j)^T S^{-1} (y_k - Phi x_j), where S is the
/// kernel covariance regularized by lam_rel (see regularized_inverse).
inline Matrix build_cost_matrix(const TransitionKernel& kernel, const Matrix& xs,
                                const Matrix& ys, double lam_rel) {
    const Eigen::Index d = kernel.cov.dim();
    if (xs.cols() != d || ys.cols() != d)
        throw DimensionError("build_cost_matrix: sample dimension differs from the kernel's");
    require_finite(xs, "build_cost_matrix xs");
    require_finite(ys, "build_cost_matrix ys");

    // Factor L with L L^T = (S + lambda I)^{-1}; reusing the eigensolve keeps
    // the cost entries exactly nonnegative (squared distances in L-space).
    const double lambda = lam_rel * kernel.cov.mat().trace() / static_cast<double>(d);
    Eigen::SelfAdjointEigenSolver<Matrix> es(kernel.cov.mat());
    if (es.info() != Eigen::Success)
        throw NumericError("eigensolver failed on kernel covariance");
    Vector vals = es.eigenvalues().array() + lambda;
    if (vals.minCoeff() <= 1e-12 * std::max(vals.maxCoeff(), 1e-300))
        throw SingularityError("kernel covariance is singular; pass lam_rel > 0");
    const Matrix half_inv = es.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal();

    const Matrix zx = (xs * kernel.transition.transpose()) * half_inv;
    const Matrix zy = ys * half_inv;
    const Vector qx = zx.rowwise().squaredNorm();
    const Vector qy = zy.rowwise().squaredNorm();
    Matrix cost = (-zx) * zy.transpose();
    cost.colwise() += 0.5 * qx;
    cost.rowwise() += 0.5 * qy.transpose();
    return cost.cwiseMax(0.0);
}

namespace detail {

inline Vector logsumexp_rows(const Matrix& s) {
    const Eigen::Index n = s.rows();
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = s.row(i).maxCoeff();
        if (!std::isfinite(m)) {
            out[i] = m;  // all -inf row stays -inf
            continue;
        }
        out[i] = m + std::log((s.row(i).array() - m).exp().sum());
    }
    return out;
}

// One exact balancing pass in the log domain. Repairs non-finite
// potentials and guarantees the absorbed kernel has no empty rows/columns.
inline void rebalance(const Matrix& cost, const Vector& log_a, const Vector& log_b,
                      Vector& f, Vector& g) {
    Matrix shifted = (-cost).rowwise() + g.transpose();
    f = log_a - logsumexp_rows(shifted);
    shifted = (-cost).colwise() + f;
    g = log_b - logsumexp_rows(shifted.transpose());
}

struct ScalingResult {
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

// Adds log(scale) into the potential; entries that would become non-finite
// are reset to 0 and repaired by the next rebalance pass.
inline void fold_scaling(Vector& potential, const Vector& scale) {
    for (Eigen::Index i = 0; i < potential.size(); ++i) {
        const double t = potential[i] + std::log(scale[i]);
        potential[i] = std::isfinite(t) ? t : 0.0;
    }
}

// Absorption-stabilized Sinkhorn scaling on exp(f + g - cost). Potentials
// stay in log space; the inner loop runs on plain matrix-vector products
// and folds the scalings back into (f, g) whenever they grow past the
// absorption threshold. Fixed point identical to textbook Sinkhorn.
inline ScalingResult scale_stage(const Matrix& cost, const Vector& a, const Vector& b,
                                 const Vector& log_a, const Vector& log_b, Vector& f,
                                 Vector& g, double tol, int max_iter) {
    constexpr double absorb_log = 30.0;
    rebalance(cost, log_a, log_b, f, g);
    Matrix kernel = (((-cost).colwise() + f).rowwise() + g.transpose()).array().exp();
    Vector u = Vector::Ones(a.size());
    Vector v = Vector::Ones(b.size());
    Vector kv = kernel * v;
    ScalingResult res;
    while (res.iterations < max_iter) {
        ++res.iterations;
        if (!(kv.array() > 0.0).all() || !kv.allFinite()) {
            fold_scaling(f, u);
            fold_scaling(g, v);
            rebalance(cost, log_a, log_b, f, g);
            kernel = (((-cost).colwise() + f).rowwise() + g.transpose()).array().exp();
            u.setOnes();
            v.setOnes();
            kv = kernel * v;
            continue;
        }
        u = a.cwiseQuotient(kv);
        v = b.cwiseQuotient(kernel.transpose() * u);
        kv.noalias() = kernel * v;
        res.residual = (u.cwiseProduct(kv) - a).cwiseAbs().sum();
        if (res.residual <= tol) {
            res.converged = true;
            break;
        }
        if (!v.allFinite() ||
            std::max(u.array().log().abs().maxCoeff(),
                     v.array().log().abs().maxCoeff()) > absorb_log) {
            fold_scaling(f, u);
            fold_scaling(g, v);
            kernel = (((-cost).colwise() + f).rowwise() + g.transpose()).array().exp();
            u.setOnes();
            v.setOnes();
            kv = kernel * v;
        }
    }
    fold_scaling(f, u);
    fold_scaling(g, v);
    return res;
}

}  // namespace detail

/// Sinkhorn's algorithm for the entropic OT plan diag(u) K diag(v) with
/// K = exp(-cost). Terminates when the L1 marginal violation drops below
/// tol, or at max_iter with the convergence flag cleared; a violation
/// still above 10 * tol at max_iter is an error.
///
/// log_domain mode tracks the potentials in log space (absorption-
/// stabilized scaling) and, when cold-started far from feasibility, first
/// runs a short cost-annealing phase; neither changes the fixed point.
/// Pass `warm` to reuse (and update) potentials from a related solve.
inline Coupling sinkhorn(const Matrix& cost, const Vector& a, const Vector& b,
                         const SinkhornOptions& opts = {}, Potentials* warm = nullptr) {
    require_finite(cost, "sinkhorn cost");
    if (a.size() != cost.rows() || b.size() != cost.cols())
        throw DimensionError("sinkhorn: marginal sizes do not match the cost matrix");
    if (a.minCoeff() <= 0.0 || b.minCoeff() <= 0.0)
        throw NumericError("sinkhorn: marginals must be strictly positive");
    if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9)
        throw NumericError("sinkhorn: marginals must sum to 1");
    if (!(opts.tol > 0.0)) throw NumericError("sinkhorn: tol must be positive");

    Coupling out;
    out.row_marginal = a;
    out.col_marginal = b;

    if (opts.mode == SinkhornMode::standard) {
        const Matrix kernel = (-cost).array().exp();
        Vector u = Vector::Ones(a.size());
        Vector v = Vector::Ones(b.size());
        Vector kv = kernel * v;
        int it = 0;
        double residual = std::numeric_limits<double>::infinity();
        bool converged = false;
        while (it < opts.max_iter) {
            ++it;
            if (!(kv.array() > 0.0).all() || !kv.allFinite())
                throw NumericError("sinkhorn: kernel underflow in standard mode; "
                                   "use log_domain");
            u = a.cwiseQuotient(kv);
            v = b.cwiseQuotient(kernel.transpose() * u);
            kv.noalias() = kernel * v;
            residual = (u.cwiseProduct(kv) - a).cwiseAbs().sum();
            if (residual <= opts.tol) {
                converged = true;
                break;
            }
        }
        out.plan = u.asDiagonal() * kernel * v.asDiagonal();
        out.converged = converged;
        out.residual = residual;
        out.iterations = it;
    } else {
        const Vector log_a = a.array().log();
        const Vector log_b = b.array().log();
        const bool have_warm = warm && warm->f.size() > 0;
        if (have_warm && (warm->f.size() != a.size() || warm->g.size() != b.size()))
            throw DimensionError("sinkhorn: warm-start potentials have wrong size");
        Vector f = have_warm ? warm->f : Vector::Zero(a.size());
        Vector g = have_warm ? warm->g : Vector::Zero(b.size());

        // Feasibility of the warm start decides whether annealing pays off.
        double initial_violation = 1.0;
        if (have_warm) {
            Vector ff = f, gg = g;
            detail::rebalance(cost, log_a, log_b, ff, gg);
            const Matrix plan =
                ((((-cost).colwise() + ff).rowwise() + gg.transpose()).array().exp());
            initial_violation = (plan.rowwise().sum() - a).cwiseAbs().sum();
        }
        int used = 0;
        if (initial_violation > 0.05) {
            for (const double scale : {4.0, 2.0}) {
                Vector fs = f / scale;
                Vector gs = g / scale;
                const auto stage = detail::scale_stage(
                    cost / scale, a, b, log_a, log_b, fs, gs,
                    std::max(opts.tol, 1e-3), std::min(3000, opts.max_iter));
                used += stage.iterations;
                f = fs * scale;
                g = gs * scale;
            }
        }
        const auto final_stage = detail::scale_stage(cost, a, b, log_a, log_b, f, g,
                                                     opts.tol,
                                                     std::max(1, opts.max_iter - used));
        out.plan = ((((-cost).colwise() + f).rowwise() + g.transpose()).array().exp());
        out.converged = final_stage.converged;
        out.residual = final_stage.residual;
        out.iterations = used + final_stage.iterations;
        if (warm) {
            warm->f = f;
            warm->g = g;
        }
    }

    if (!out.converged && out.residual > 10.0 * opts.tol)
        throw NonConvergenceError("sinkhorn: no convergence after " +
                                      std::to_string(out.iterations) +
                                      " iterations (L1 violation " +
                                      std::to_string(out.residual) + ")",
                                  out.residual);
    return out;
}

/// Second moments of a coupling, the sufficient statistics for the MLE
/// updates. All expectations use the plan's own mass so that residual
/// moments are exact second moments of the inferred joint distribution.
struct CouplingMoments {
    Matrix exx;  // E[X X^T]
    Matrix eyx;  // E[Y X^T]
    Matrix eyy;  // E[Y Y^T]
    double dt = 0.0;

    /// E[(Y - X) X^T]
    Matrix drift_cross() const { return eyx - exx; }

    /// E[r r^T] with r = (Y - X) - A X dt, i.e. residuals of the
    /// linearized one-step prediction.
    Matrix residual_moment(const Matrix& drift) const {
        const Matrix b = Matrix::Identity(drift.rows(), drift.cols()) + drift * dt;
        Matrix s = eyy - eyx * b.transpose() - b * eyx.transpose() + b * exx * b.transpose();
        return (s + s.transpose()) / 2.0;
    }
};

inline CouplingMoments coupling_moments(const Coupling& coupling, const Matrix& xs,
                                        const Matrix& ys, double dt) {
    if (coupling.plan.rows() != xs.rows() || coupling.plan.cols() != ys.rows())
        throw DimensionError("coupling_moments: plan shape does not match the samples");
    if (xs.cols() != ys.cols())
        throw DimensionError("coupling_moments: sample dimensions differ");
    const Vector row_mass = coupling.plan.rowwise().sum();
    const Vector col_mass = coupling.plan.colwise().sum();
    CouplingMoments m;
    m.exx = xs.transpose() * row_mass.asDiagonal() * xs;
    m.eyx = ys.transpose() * coupling.plan.transpose() * xs;
    m.eyy = ys.transpose() * col_mass.asDiagonal() * ys;
    m.dt = dt;
    return m;
}

/// Markov-concatenation sampling: index j0 from the first row marginal,
/// then j_{i+1} ~ plan_i(j_i, .) / rowsum(j_i); emits the corresponding
/// sample coordinates as paths.
inline TrajectorySet sample_paths(const std::vector<double>& times,
                                  const std::vector<Matrix>& snapshots,
                                  const std::vector<Coupling>& couplings, int n_paths,
                                  std::uint64_t seed) {
    if (snapshots.size() != times.size())
        throw DimensionError("sample_paths: times and snapshots differ in length");
    if (couplings.size() + 1 != snapshots.size())
        throw DimensionError("sample_paths: need exactly one coupling per adjacent pair");
    if (n_paths < 0) throw DimensionError("sample_paths: n_paths must be >= 0");
    for (std::size_t i = 0; i < couplings.size(); ++i) {
        if (couplings[i].plan.rows() != snapshots[i].rows() ||
            couplings[i].plan.cols() != snapshots[i + 1].rows())
            throw DimensionError("sample_paths: coupling " + std::to_string(i) +
                                 " does not match its snapshots");
        if (i + 1 < couplings.size()) {
            const double gap = (couplings[i].col_marginal -
                                couplings[i + 1].row_marginal).cwiseAbs().sum();
            if (gap > 1e-6)
                throw AlignmentError("sample_paths: inner marginals of couplings " +
                                     std::to_string(i) + " and " + std::to_string(i + 1) +
                                     " disagree (L1 gap " + std::to_string(gap) + ")");
        }
    }

    const Eigen::Index d = snapshots.front().cols();
    TrajectorySet out;
    out.times = times;
    out.states.assign(times.size(), Matrix(n_paths, d));
    for (int p = 0; p < n_paths; ++p) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p)));
        Eigen::Index j = rng.categorical(couplings.front().row_marginal);
        out.states[0].row(p) = snapshots[0].row(j);
        for (std::size_t i = 0; i < couplings.size(); ++i) {
            const Vector row = couplings[i].plan.row(j);
            if (!(row.sum() > 0.0))
                throw DegenerateCouplingError("sample_paths: zero-mass row " +
                                              std::to_string(j) + " in coupling " +
                                              std::to_string(i));
            j = rng.categorical(row);
            out.states[i + 1].row(p) = snapshots[i + 1].row(j);
        }
    }
    return out;
}

/// Batch AEOT: solves the N-1 adjacent-pair problems of a dataset against
/// one reference kernel. Pairs are independent and run on the worker pool;
/// `warm`, when provided, carries per-pair potentials across calls.
///
/// With auto_mode, each pair picks its own Sinkhorn mode: log_domain for
/// d >= 2 or whenever exp(-cost) would underflow, standard otherwise.
inline std::vector<Coupling> solve_adjacent(const MarginalDataset& data,
                                            const TransitionKernel& kernel, double lam_rel,
                                            const SinkhornOptions& opts,
                                            std::vector<Potentials>* warm = nullptr,
                                            unsigned workers = 1, bool auto_mode = false) {
    data.validate();
    const std::size_t n_pairs = data.snapshots.size() - 1;
    if (warm && warm->empty()) warm->resize(n_pairs);
    if (warm && warm->size() != n_pairs)
        throw DimensionError("solve_adjacent: warm-start cache has wrong size");
    std::vector<Coupling> out(n_pairs);
    std::exception_ptr error;
    std::mutex error_mutex;
    parallel_for(n_pairs, workers, [&](std::size_t i) {
        const Matrix& xs = data.snapshots[i].samples;
        const Matrix& ys = data.snapshots[i + 1].samples;
        const Matrix cost = build_cost_matrix(kernel, xs, ys, lam_rel);
        const Vector a = Vector::Constant(xs.rows(), 1.0 / static_cast<double>(xs.rows()));
        const Vector b = Vector::Constant(ys.rows(), 1.0 / static_cast<double>(ys.rows()));
        SinkhornOptions pair_opts = opts;
        if (auto_mode) {
            // exp(-c) underflows below roughly -708
            const bool underflow = cost.maxCoeff() > 700.0;
            pair_opts.mode = (data.dim() >= 2 || underflow) ? SinkhornMode::log_domain
                                                            : SinkhornMode::standard;
        }
        Potentials* w =
            (warm && pair_opts.mode == SinkhornMode::log_domain) ? &(*warm)[i] : nullptr;
        try {
            out[i] = sinkhorn(cost, a, b, pair_opts, w);
        } catch (const NonConvergenceError& e) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error)
                error = std::make_exception_ptr(NonConvergenceError(
                    "pair " + std::to_string(i) + ": " + e.what(), e.residual));
        }
    });
    if (error) std::rethrow_exception(error);
    return out;
}

}  // namespace appex
