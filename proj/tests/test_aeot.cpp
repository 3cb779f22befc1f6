#include <catch2/catch_amalgamated.hpp>

#include "appex/aeot.hpp"
#include "oracles.hpp"

using namespace appex;

namespace {

Vector uniform_marginal(Eigen::Index n) {
    return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

Matrix random_cost(Rng& rng, Eigen::Index m, Eigen::Index n, double hi) {
    Matrix c(m, n);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) c(i, j) = rng.uniform(0.0, hi);
    return c;
}

Vector random_marginal(Rng& rng, Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(0.2, 1.0);
    return v / v.sum();
}

}  // namespace

TEST_CASE("cost matrix hand cases") {
    TransitionKernel kernel{Matrix::Identity(1, 1), PsdMatrix::identity(1), 1.0,
                            KernelScheme::linearized};
    // same single point, identity covariance
    TransitionKernel k2{Matrix::Identity(2, 2), PsdMatrix::identity(2), 1.0,
                        KernelScheme::linearized};
    Matrix pt(1, 2);
    pt << 0.7, -0.3;
    REQUIRE(build_cost_matrix(k2, pt, pt, 0.0)(0, 0) == 0.0);

    // d = 1, Phi = 1, cov = 2, x = 0, y = 2: cost = (1/2) * 4 / 2 = 1
    TransitionKernel k1{Matrix::Identity(1, 1), PsdMatrix(Matrix::Constant(1, 1, 2.0)), 1.0,
                        KernelScheme::linearized};
    Matrix x0(1, 1), y2(1, 1);
    x0 << 0.0;
    y2 << 2.0;
    REQUIRE(build_cost_matrix(k1, x0, y2, 0.0)(0, 0) == Catch::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("isotropic covariance reduces to the scalar-regularized EOT cost") {
    Rng rng(3);
    const double sigma_sq = 0.8, dt = 0.05;
    TransitionKernel kernel{Matrix::Identity(2, 2),
                            PsdMatrix(sigma_sq * dt * Matrix::Identity(2, 2)), dt,
                            KernelScheme::linearized};
    Matrix xs(5, 2), ys(6, 2);
    for (Eigen::Index i = 0; i < xs.size(); ++i) xs(i) = rng.uniform(-2.0, 2.0);
    for (Eigen::Index i = 0; i < ys.size(); ++i) ys(i) = rng.uniform(-2.0, 2.0);
    const Matrix cost = build_cost_matrix(kernel, xs, ys, 0.0);
    for (Eigen::Index j = 0; j < xs.rows(); ++j)
        for (Eigen::Index k = 0; k < ys.rows(); ++k) {
            const double expected =
                (ys.row(k) - xs.row(j)).squaredNorm() / (2.0 * sigma_sq * dt);
            REQUIRE(cost(j, k) == Catch::Approx(expected).margin(1e-12));
        }
}

TEST_CASE("singular kernel covariance requires regularization") {
    Matrix rank1(2, 2);
    rank1 << 5, -5, -5, 5;
    TransitionKernel kernel{Matrix::Identity(2, 2), PsdMatrix(rank1 * 0.05), 0.05,
                            KernelScheme::linearized};
    Matrix xs(2, 2), ys(2, 2);
    xs << 1, 0, 0, 1;
    ys << 0.5, 0.2, -0.1, 0.3;
    REQUIRE_THROWS_AS(build_cost_matrix(kernel, xs, ys, 0.0), SingularityError);
    REQUIRE(build_cost_matrix(kernel, xs, ys, 1e-6).allFinite());
}

TEST_CASE("zero cost gives the product coupling") {
    const Vector half = uniform_marginal(2);
    for (const SinkhornMode mode : {SinkhornMode::standard, SinkhornMode::log_domain}) {
        SinkhornOptions opts;
        opts.mode = mode;
        opts.tol = 1e-12;
        const Coupling c = sinkhorn(Matrix::Zero(2, 2), half, half, opts);
        REQUIRE(c.converged);
        REQUIRE((c.plan - Matrix::Constant(2, 2, 0.25)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("2x2 plan matches the one-parameter grid-search oracle") {
    Matrix cost(2, 2);
    cost << 0, 1, 1, 0;
    const Vector half = uniform_marginal(2);
    // feasible family: pi11 = t in [0, 1/2], rest determined
    double best_t = 0.0, best_val = 1e300;
    const Vector a = half, b = half;
    for (int i = 1; i < 500000; ++i) {
        const double t = 0.5 * i / 500000.0;
        Matrix pi(2, 2);
        pi << t, 0.5 - t, 0.5 - t, t;
        double val = 0.0;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c)
                val += cost(r, c) * pi(r, c) + pi(r, c) * std::log(pi(r, c) / 0.25);
        if (val < best_val) {
            best_val = val;
            best_t = t;
        }
    }
    SinkhornOptions opts;
    opts.tol = 1e-12;
    const Coupling c = sinkhorn(cost, half, half, opts);
    REQUIRE(c.plan(0, 0) == Catch::Approx(best_t).margin(1e-6));
}

TEST_CASE("sinkhorn matches the brute-force strictly-convex minimizer") {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index n = trial % 2 == 0 ? 2 : 3;
        const Matrix cost = random_cost(rng, n, n, 3.0);
        const Vector a = random_marginal(rng, n);
        const Vector b = random_marginal(rng, n);
        SinkhornOptions opts;
        opts.tol = 1e-12;
        opts.max_iter = 20000;
        const Coupling c = sinkhorn(cost, a, b, opts);
        const Matrix oracle = oracles::brute_force_entropic_ot(cost, a, b);
        REQUIRE((c.plan - oracle).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("converged plans satisfy the marginal constraints") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index m = rng.uniform_int(2, 40);
        const Eigen::Index n = rng.uniform_int(2, 40);
        const Matrix cost = random_cost(rng, m, n, 5.0);
        const Vector a = random_marginal(rng, m);
        const Vector b = random_marginal(rng, n);
        SinkhornOptions opts;
        opts.mode = trial % 2 == 0 ? SinkhornMode::standard : SinkhornMode::log_domain;
        const Coupling c = sinkhorn(cost, a, b, opts);
        REQUIRE(c.converged);
        REQUIRE(c.marginal_violation() <= 2e-8);
        REQUIRE(c.plan.minCoeff() >= 0.0);
        REQUIRE(c.plan.sum() == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("symmetric cost with equal marginals yields a symmetric plan") {
    Rng rng(23);
    Matrix cost = random_cost(rng, 6, 6, 2.0);
    cost = ((cost + cost.transpose()) / 2.0).eval();
    const Vector a = uniform_marginal(6);
    const Coupling c = sinkhorn(cost, a, a);
    REQUIRE((c.plan - c.plan.transpose()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("adding a constant to every cost entry leaves the plan unchanged") {
    Rng rng(29);
    const Matrix cost = random_cost(rng, 5, 7, 2.0);
    const Vector a = random_marginal(rng, 5);
    const Vector b = random_marginal(rng, 7);
    SinkhornOptions opts;
    opts.tol = 1e-11;
    const Coupling base = sinkhorn(cost, a, b, opts);
    const Coupling shifted =
        sinkhorn((cost.array() + 7.3).matrix(), a, b, opts);
    REQUIRE((base.plan - shifted.plan).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("log-domain agrees with standard mode when the latter is finite") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix cost = random_cost(rng, 8, 8, 4.0);
        const Vector a = random_marginal(rng, 8);
        const Vector b = random_marginal(rng, 8);
        SinkhornOptions opts;
        opts.tol = 1e-10;
        opts.mode = SinkhornMode::standard;
        const Coupling std_plan = sinkhorn(cost, a, b, opts);
        opts.mode = SinkhornMode::log_domain;
        const Coupling log_plan = sinkhorn(cost, a, b, opts);
        REQUIRE((std_plan.plan - log_plan.plan).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("sinkhorn input validation and failure modes") {
    const Vector half = uniform_marginal(2);
    Vector bad(2);
    bad << 0.0, 1.0;
    REQUIRE_THROWS_AS(sinkhorn(Matrix::Zero(2, 2), bad, half), NumericError);
    Vector not_normalized(2);
    not_normalized << 0.5, 0.6;
    REQUIRE_THROWS_AS(sinkhorn(Matrix::Zero(2, 2), not_normalized, half), NumericError);
    REQUIRE_THROWS_AS(sinkhorn(Matrix::Zero(3, 2), half, half), DimensionError);

    // iteration cap far below what the tolerance needs
    Rng rng(37);
    const Matrix cost = random_cost(rng, 12, 12, 6.0);
    SinkhornOptions opts;
    opts.tol = 1e-13;
    opts.max_iter = 1;
    opts.mode = SinkhornMode::standard;
    try {
        sinkhorn(cost, uniform_marginal(12), uniform_marginal(12), opts);
        FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
        REQUIRE(e.residual > 10 * opts.tol);
    }

    // standard mode underflows on huge costs
    opts = SinkhornOptions{};
    opts.mode = SinkhornMode::standard;
    REQUIRE_THROWS_AS(
        sinkhorn(Matrix::Constant(2, 2, 1e4), half, half, opts),
        NumericError);
    // while log_domain handles them
    opts.mode = SinkhornMode::log_domain;
    Matrix huge(2, 2);
    huge << 0, 1e4, 1e4, 0;
    REQUIRE(sinkhorn(huge, half, half, opts).converged);
}

TEST_CASE("coupling moments hand cases") {
    // identity coupling with ys == xs: E[dX X^T] = 0
    Matrix xs(3, 2);
    xs << 1, 0, 0, 1, 1, 1;
    Coupling identity;
    identity.plan = Matrix::Identity(3, 3) / 3.0;
    identity.row_marginal = uniform_marginal(3);
    identity.col_marginal = uniform_marginal(3);
    const CouplingMoments same = coupling_moments(identity, xs, xs, 0.1);
    REQUIRE(same.drift_cross().cwiseAbs().maxCoeff() < 1e-15);

    // d = 1 single pair
    Matrix x1(1, 1), y1(1, 1);
    x1 << 1.0;
    y1 << 1.1;
    Coupling point;
    point.plan = Matrix::Constant(1, 1, 1.0);
    point.row_marginal = Vector::Ones(1);
    point.col_marginal = Vector::Ones(1);
    const CouplingMoments m = coupling_moments(point, x1, y1, 0.1);
    REQUIRE(m.drift_cross()(0, 0) == Catch::Approx(0.1).margin(1e-15));
    REQUIRE(m.exx(0, 0) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("product-coupling moments match the direct double sum") {
    Rng rng(41);
    Matrix xs(6, 2), ys(5, 2);
    for (Eigen::Index i = 0; i < xs.size(); ++i) xs(i) = rng.uniform(-1.0, 1.0);
    for (Eigen::Index i = 0; i < ys.size(); ++i) ys(i) = rng.uniform(-1.0, 1.0);
    const Vector a = random_marginal(rng, 6);
    const Vector b = random_marginal(rng, 5);
    Coupling product;
    product.plan = a * b.transpose();
    product.row_marginal = a;
    product.col_marginal = b;
    const CouplingMoments m = coupling_moments(product, xs, ys, 0.05);
    Matrix direct = Matrix::Zero(2, 2);
    for (Eigen::Index j = 0; j < 6; ++j)
        for (Eigen::Index k = 0; k < 5; ++k)
            direct += product.plan(j, k) * (ys.row(k) - xs.row(j)).transpose() * xs.row(j);
    REQUIRE((m.drift_cross() - direct).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("diagonal-plan path sampling pairs identical indices") {
    Matrix s0(4, 1), s1(4, 1);
    s0 << 1, 2, 3, 4;
    s1 << 10, 20, 30, 40;
    Coupling diag;
    diag.plan = Matrix::Identity(4, 4) / 4.0;
    diag.row_marginal = uniform_marginal(4);
    diag.col_marginal = uniform_marginal(4);
    const TrajectorySet paths =
        sample_paths({0.0, 0.05}, {s0, s1}, {diag}, 200, 7);
    for (Eigen::Index p = 0; p < 200; ++p)
        REQUIRE(paths.states[1](p, 0) == Catch::Approx(10.0 * paths.states[0](p, 0)));
}

TEST_CASE("product-coupling path sampling is independent across steps") {
    const Eigen::Index n = 5;
    Matrix s0(n, 1), s1(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        s0(i, 0) = i;
        s1(i, 0) = i;
    }
    Coupling product;
    product.row_marginal = uniform_marginal(n);
    product.col_marginal = uniform_marginal(n);
    product.plan = product.row_marginal * product.col_marginal.transpose();
    const int draws = 10000;
    const TrajectorySet paths = sample_paths({0.0, 0.05}, {s0, s1}, {product}, draws, 3);
    Matrix counts = Matrix::Zero(n, n);
    for (int p = 0; p < draws; ++p)
        counts(static_cast<Eigen::Index>(paths.states[0](p, 0)),
               static_cast<Eigen::Index>(paths.states[1](p, 0))) += 1.0;
    const Vector rows = counts.rowwise().sum();
    const Vector cols = counts.colwise().sum().transpose();
    double chi_sq = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double expected = rows[i] * cols[j] / draws;
            chi_sq += (counts(i, j) - expected) * (counts(i, j) - expected) / expected;
        }
    // chi-square critical value at p = 0.01 with (5-1)(5-1) = 16 dof
    REQUIRE(chi_sq < 32.0);
}

TEST_CASE("path sampling edge cases") {
    Matrix s0(2, 1), s1(2, 1);
    s0 << 1, 2;
    s1 << 3, 4;
    Coupling c;
    c.plan = Matrix::Constant(2, 2, 0.25);
    c.row_marginal = uniform_marginal(2);
    c.col_marginal = uniform_marginal(2);

    const TrajectorySet none = sample_paths({0.0, 0.1}, {s0, s1}, {c}, 0, 1);
    REQUIRE(none.times == std::vector<double>{0.0, 0.1});
    REQUIRE(none.states[0].rows() == 0);

    Coupling degenerate = c;
    degenerate.plan.row(0).setZero();
    degenerate.row_marginal << 1.0, 0.0;  // forces the zero row to be visited
    REQUIRE_THROWS_AS(sample_paths({0.0, 0.1}, {s0, s1}, {degenerate}, 4, 1),
                      DegenerateCouplingError);

    // incompatible inner marginals
    Coupling shifted = c;
    shifted.row_marginal << 0.9, 0.1;
    REQUIRE_THROWS_AS(
        sample_paths({0.0, 0.1, 0.2}, {s0, s1, s1}, {c, shifted}, 4, 1), AlignmentError);
}
