#include <algorithm>
#include <catch2/catch_amalgamated.hpp>

#include "appex/simulate.hpp"

using namespace appex;

namespace {

std::vector<std::vector<double>> sorted_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

}  // namespace

TEST_CASE("zero drift and zero noise keep every path constant") {
    const SdeParams still = SdeParams::from_factor(Matrix::Zero(2, 2), Matrix::Zero(2, 2));
    Vector x0(2);
    x0 << 1.5, -0.5;
    const TrajectorySet traj =
        euler_maruyama(still, InitialDistribution::point(x0), 0.01, 10, 5, 1);
    for (const auto& state : traj.states)
        for (Eigen::Index p = 0; p < 5; ++p)
            REQUIRE((state.row(p).transpose() - x0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("OU variance matches the closed form") {
    const SdeParams ou = SdeParams::from_factor(Matrix::Constant(1, 1, -1.0),
                                                Matrix::Constant(1, 1, 1.0));
    const TrajectorySet traj = euler_maruyama(
        ou, InitialDistribution::point(Vector::Constant(1, 2.0)), 0.01, 100, 10000, 77);
    const Vector at_one = traj.states.back().col(0);
    const double mean = at_one.mean();
    const double var = (at_one.array() - mean).square().sum() / (at_one.size() - 1);
    const double expected = (1.0 - std::exp(-2.0)) / 2.0;  // Var(X0) = 0
    REQUIRE(std::abs(var - expected) < 0.1 * expected);
}

TEST_CASE("rotation SDE mean moves the initial point around the origin") {
    Matrix rot(2, 2);
    rot << 0, 1, -1, 0;
    const SdeParams sde = SdeParams::from_factor(rot, Matrix::Identity(2, 2));
    Vector x0(2);
    x0 << 2.0, 0.0;
    const int n_steps = 157;  // t ~ pi/2
    const TrajectorySet traj =
        euler_maruyama(sde, InitialDistribution::point(x0), 0.01, n_steps, 10000, 5);
    const Vector mean = traj.states.back().colwise().mean().transpose();
    REQUIRE(std::abs(mean[0] - 0.0) < 0.1);
    REQUIRE(std::abs(mean[1] - (-2.0)) < 0.1);
}

TEST_CASE("identical seeds reproduce bit-identical trajectories") {
    const SdeParams ou = SdeParams::from_factor(Matrix::Constant(1, 1, -0.5),
                                                Matrix::Constant(1, 1, 0.7));
    const InitialDistribution p0 = InitialDistribution::point(Vector::Constant(1, 3.0));
    const TrajectorySet a = euler_maruyama(ou, p0, 0.01, 50, 20, 42);
    const TrajectorySet b = euler_maruyama(ou, p0, 0.01, 50, 20, 42);
    for (std::size_t i = 0; i < a.n_times(); ++i) REQUIRE(a.states[i] == b.states[i]);
    const TrajectorySet c = euler_maruyama(ou, p0, 0.01, 50, 20, 43);
    REQUIRE(a.states.back() != c.states.back());
}

TEST_CASE("zero-noise simulation reproduces forward Euler exactly") {
    Matrix a(2, 2);
    a << -0.4, 0.9, -0.3, 0.1;
    const SdeParams ode = SdeParams::from_factor(a, Matrix::Zero(2, 2));
    Vector x0(2);
    x0 << 1.0, -2.0;
    const TrajectorySet traj =
        euler_maruyama(ode, InitialDistribution::point(x0), 0.01, 30, 1, 9);
    Vector x = x0;
    for (std::size_t k = 0; k < traj.n_times(); ++k) {
        REQUIRE((traj.states[k].row(0).transpose() - x).cwiseAbs().maxCoeff() == 0.0);
        x = x + a * x * 0.01;
    }
}

TEST_CASE("divergent simulation reports the step index") {
    const SdeParams unstable = SdeParams::from_factor(Matrix::Constant(1, 1, 1e3),
                                                      Matrix::Zero(1, 1));
    const InitialDistribution p0 = InitialDistribution::point(Vector::Constant(1, 2.0));
    try {
        euler_maruyama(unstable, p0, 1.0, 400, 1, 0);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        REQUIRE(e.step > 0);
        REQUIRE(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("subsample_marginals selects the requested grid") {
    const SdeParams ou = SdeParams::from_factor(Matrix::Constant(1, 1, -1.0),
                                                Matrix::Constant(1, 1, 1.0));
    const InitialDistribution p0 = InitialDistribution::point(Vector::Constant(1, 2.0));
    const TrajectorySet traj = euler_maruyama(ou, p0, 0.01, 100, 30, 3);

    const MarginalDataset single = subsample_marginals(traj, 0.05, 1, 8);
    REQUIRE(single.snapshots.size() == 1);
    REQUIRE(single.snapshots[0].time == 0.0);

    const MarginalDataset data = subsample_marginals(traj, 0.05, 20, 8);
    REQUIRE(data.snapshots.size() == 20);
    for (int i = 0; i < 20; ++i)
        REQUIRE(data.snapshots[static_cast<std::size_t>(i)].time ==
                Catch::Approx(0.05 * i).margin(1e-12));

    REQUIRE_THROWS_AS(subsample_marginals(traj, 0.013, 5, 8), AlignmentError);
    REQUIRE_THROWS_AS(subsample_marginals(traj, 0.05, 22, 8), AlignmentError);
}

TEST_CASE("subsampling only permutes within each snapshot") {
    const SdeParams ou = SdeParams::from_factor(Matrix::Constant(2, 2, 0.1),
                                                Matrix::Identity(2, 2));
    const InitialDistribution p0 = gen_default_initial(2, 4);
    const TrajectorySet traj = euler_maruyama(ou, p0, 0.01, 50, 100, 4);
    const MarginalDataset data = subsample_marginals(traj, 0.05, 10, 4);
    bool any_moved = false;
    for (std::size_t i = 0; i < data.snapshots.size(); ++i) {
        const Matrix& raw = traj.states[i * 5];
        const Matrix& shuffled = data.snapshots[i].samples;
        REQUIRE(sorted_rows(raw) == sorted_rows(shuffled));
        if (raw != shuffled) any_moved = true;
    }
    REQUIRE(any_moved);

    // bit-identical under the same shuffle seed
    const MarginalDataset again = subsample_marginals(traj, 0.05, 10, 4);
    for (std::size_t i = 0; i < data.snapshots.size(); ++i)
        REQUIRE(data.snapshots[i].samples == again.snapshots[i].samples);
}

TEST_CASE("dataset validation") {
    MarginalDataset data;
    REQUIRE_THROWS_AS(data.validate(), DimensionError);
    data.snapshots.push_back(Snapshot{0.0, Matrix::Zero(3, 2)});
    data.snapshots.push_back(Snapshot{0.0, Matrix::Zero(3, 2)});  // non-increasing time
    REQUIRE_THROWS_AS(data.validate(), AlignmentError);
    data.snapshots[1].time = 0.1;
    REQUIRE_NOTHROW(data.validate());
    data.snapshots.push_back(Snapshot{0.3, Matrix::Zero(3, 2)});
    REQUIRE_THROWS_AS(data.uniform_dt(), AlignmentError);
}
