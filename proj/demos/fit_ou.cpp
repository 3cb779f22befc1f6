// Minimal end-to-end use of the library: simulate an Ornstein-Uhlenbeck
// process (A = -1, H = 1), throw away path identity, and recover both
// parameters from the marginals alone.

#include <iostream>

#include "appex/appex.hpp"
#include "appex/sde_model.hpp"
#include "appex/simulate.hpp"

int main() {
    using namespace appex;

    const SdeParams truth = SdeParams::from_factor(Matrix::Constant(1, 1, -1.0),
                                                   Matrix::Constant(1, 1, 1.0));
    const InitialDistribution p0 = InitialDistribution::point(Vector::Ones(1) * 2.0);

    const TrajectorySet traj = euler_maruyama(truth, p0, 0.01, 100, 500, /*seed=*/7);
    const MarginalDataset data = subsample_marginals(traj, 0.05, 20, /*shuffle_seed=*/7);

    AppexConfig config;
    config.sigma0_sq = 0.3;  // deliberately misspecified initial guess
    config.seed = 7;
    const AppexResult fit = run_appex(data, config);

    std::cout << "true  A = -1,      H = 1\n"
              << "fit   A = " << fit.drift(0, 0) << ",  H = " << fit.diffusion.mat()(0, 0)
              << "\nWOT   A = " << fit.history.front().drift(0, 0)
              << ",  H = " << fit.history.front().diffusion.mat()(0, 0) << '\n';
    return 0;
}
