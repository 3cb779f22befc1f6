// Command-line surface for the marginals-only SDE estimation pipeline:
//   simulate    draw trajectories and write a marginals-only dataset
//   estimate    run the alternating estimation loop on a dataset
//   experiment  replicate a full protocol from a spec file
//   graph       extract the causal graph from estimated parameters
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/format error.
// Failures print machine-readable JSON {"error": {...}} to stderr.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "appex/appex.hpp"
#include "appex/dataset_io.hpp"
#include "appex/experiment.hpp"

namespace {

using appex::Json;

struct UsageError : appex::Error {
    using Error::Error;
};

void add_appex_flags(CLI::App* cmd, appex::AppexConfig& config, bool require_sigma0) {
    cmd->add_option("--iters", config.n_iters, "Alternating iterations")
        ->capture_default_str();
    auto* sigma = cmd->add_option("--sigma0", config.sigma0_sq,
                                  "Initial isotropic diffusion guess (sigma^2)");
    if (require_sigma0) sigma->required();
    cmd->add_option("--tol", config.sinkhorn_tol, "Sinkhorn L1 marginal tolerance")
        ->capture_default_str();
    cmd->add_option("--max-iter", config.sinkhorn_max_iter, "Sinkhorn iteration cap")
        ->capture_default_str();
    cmd->add_option("--lam-rel", config.lam_rel, "Relative covariance regularization")
        ->capture_default_str();
    cmd->add_option("--stop-tol", config.stop_tol,
                    "Early-stop threshold on relative parameter change (0 = off)")
        ->capture_default_str();
    cmd->add_option("--sampled-paths", config.n_sampled_paths,
                    "Paths drawn when --source sampled_paths")
        ->capture_default_str();
}

void apply_mode_flags(const std::string& scheme, const std::string& source,
                      const std::string& mode, appex::AppexConfig& config) {
    if (scheme == "exact") config.kernel_scheme = appex::KernelScheme::exact;
    else if (scheme == "linearized") config.kernel_scheme = appex::KernelScheme::linearized;
    else if (scheme != "auto") throw UsageError("unknown --scheme '" + scheme + "'");
    if (source == "sampled_paths")
        config.estimation_source = appex::EstimationSource::sampled_paths;
    else if (source != "coupling_moments")
        throw UsageError("unknown --source '" + source + "'");
    if (mode == "standard") config.sinkhorn_mode = appex::SinkhornMode::standard;
    else if (mode == "log_domain") config.sinkhorn_mode = appex::SinkhornMode::log_domain;
    else if (mode != "auto") throw UsageError("unknown --mode '" + mode + "'");
}

int run(int argc, char** argv) {
    CLI::App app{"Drift/diffusion estimation for linear additive-noise SDEs "
                 "from temporal marginals"};
    app.require_subcommand(1);

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "Simulate a dataset of temporal marginals");
    std::string sim_kind = "random_dense";
    std::string sim_params_path;
    std::string sim_out = "dataset";
    int sim_d = 3, sim_m = 500, sim_steps = 100, sim_marginals = 20;
    double sim_dt_em = 0.01, sim_dt_obs = 0.05, sim_edge_prob = 0.25;
    std::uint64_t sim_seed = 0;
    bool sim_keep_paths = false;
    sim->add_option("--kind", sim_kind,
                    "example1a..example3b | random_dense | causal_sufficient | "
                    "latent_confounded")
        ->capture_default_str();
    sim->add_option("--params", sim_params_path, "SDE parameter JSON (overrides --kind)");
    sim->add_option("--d", sim_d, "Dimension (random kinds)")->capture_default_str();
    sim->add_option("--M", sim_m, "Samples per marginal")->capture_default_str();
    sim->add_option("--dt-em", sim_dt_em, "Simulation step")->capture_default_str();
    sim->add_option("--n-steps", sim_steps, "Simulation steps")->capture_default_str();
    sim->add_option("--dt-obs", sim_dt_obs, "Observation spacing")->capture_default_str();
    sim->add_option("--n-marginals", sim_marginals, "Observed marginals")
        ->capture_default_str();
    sim->add_option("--edge-prob", sim_edge_prob, "Edge probability (causal kinds)")
        ->capture_default_str();
    sim->add_option("--seed", sim_seed, "Random seed")->capture_default_str();
    sim->add_option("--out", sim_out, "Output prefix (<out>.csv, <out>.json)")
        ->capture_default_str();
    sim->add_flag("--keep-paths", sim_keep_paths,
                  "Also write the identity-bearing trajectories");

    // ---- estimate ----
    auto* est = app.add_subcommand("estimate", "Estimate (A, H) from a marginals CSV");
    std::string est_data;
    std::string est_scheme = "auto", est_source = "coupling_moments", est_mode = "auto";
    std::string est_history;
    std::uint64_t est_seed = 0;
    unsigned est_workers = 1;
    est->add_option("dataset", est_data, "Dataset CSV path")->required();
    appex::AppexConfig est_config;
    add_appex_flags(est, est_config, /*require_sigma0=*/true);
    est->add_option("--scheme", est_scheme, "auto | exact | linearized")
        ->capture_default_str();
    est->add_option("--source", est_source, "coupling_moments | sampled_paths")
        ->capture_default_str();
    est->add_option("--mode", est_mode, "auto | standard | log_domain")
        ->capture_default_str();
    est->add_option("--seed", est_seed, "Random seed")->capture_default_str();
    est->add_option("--workers", est_workers, "Concurrent pair solves")
        ->capture_default_str();
    est->add_option("--history", est_history, "Write per-iteration records (JSON lines)");

    // ---- experiment ----
    auto* exp = app.add_subcommand("experiment", "Run a replicated protocol from a spec file");
    std::string exp_spec_path, exp_out = ".";
    unsigned exp_workers = 1;
    bool exp_no_history = false;
    exp->add_option("spec", exp_spec_path, "Experiment spec JSON")->required();
    exp->add_option("--out", exp_out, "Output directory")->capture_default_str();
    exp->add_option("--workers", exp_workers, "Concurrent replicates")->capture_default_str();
    exp->add_flag("--no-history", exp_no_history, "Omit per-iteration history from the bundle");

    // ---- graph ----
    auto* gr = app.add_subcommand("graph", "Extract the causal graph from estimates");
    std::string gr_input, gr_truth, gr_out;
    double gr_eps = 0.5;
    gr->add_option("estimates", gr_input, "JSON with A_hat/H_hat (or A/H)")->required();
    gr->add_option("--eps", gr_eps, "Edge threshold")->capture_default_str();
    gr->add_option("--truth", gr_truth, "Ground-truth params or graph JSON (adds SHD)");
    gr->add_option("--out", gr_out, "Output prefix (<out>.json, <out>.dot)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (sim->parsed()) {
        std::optional<appex::SdeParams> params;
        std::optional<appex::InitialDistribution> p0;
        if (!sim_params_path.empty()) {
            params = appex::load_sde_params(sim_params_path);
        } else {
            const auto kind = appex::experiment_kind_from_string(sim_kind);
            if (auto fixture = appex::experiment_fixture(kind)) {
                params = fixture->first;
                p0 = fixture->second;
            } else {
                const appex::SdeKind sde_kind =
                    kind == appex::ExperimentKind::random_dense
                        ? appex::SdeKind::dense
                        : (kind == appex::ExperimentKind::causal_sufficient
                               ? appex::SdeKind::causal_sufficient
                               : appex::SdeKind::latent_confounded);
                params = appex::gen_random_sde(sim_d, sde_kind, sim_edge_prob,
                                               appex::derive_seed(sim_seed, 0))
                             .params;
            }
        }
        if (!p0) p0 = appex::gen_default_initial(params->dim(), appex::derive_seed(sim_seed, 1));
        const auto traj = appex::euler_maruyama(*params, *p0, sim_dt_em, sim_steps, sim_m,
                                                appex::derive_seed(sim_seed, 2));
        const auto data = appex::subsample_marginals(traj, sim_dt_obs, sim_marginals,
                                                     appex::derive_seed(sim_seed, 3));
        appex::save_marginals(data, sim_out + ".csv");
        appex::save_sde_params(*params, sim_out + "_truth.json");
        if (sim_keep_paths) appex::save_trajectories(traj, sim_out + "_paths.csv");
        std::cerr << "wrote " << sim_out << ".csv (" << data.snapshots.size()
                  << " snapshots x " << sim_m << " samples, d=" << params->dim() << ")\n";
        return 0;
    }

    if (est->parsed()) {
        apply_mode_flags(est_scheme, est_source, est_mode, est_config);
        est_config.seed = est_seed;
        est_config.workers = est_workers;
        const auto data = appex::load_marginals(est_data);
        if (data.snapshots.size() < 2)
            throw appex::FormatError("N >= 2 required: dataset has " +
                                     std::to_string(data.snapshots.size()) + " snapshot");
        const auto result = appex::run_appex(data, est_config);
        if (!est_history.empty()) appex::save_history(result.history, est_history);
        Json out;
        out["A_hat"] = appex::matrix_to_json(result.drift);
        out["H_hat"] = appex::matrix_to_json(result.diffusion.mat());
        std::cout << out.dump(2) << '\n';
        return 0;
    }

    if (exp->parsed()) {
        Json spec_json;
        try {
            appex::io_detail::open_in(exp_spec_path) >> spec_json;
        } catch (const Json::exception& e) {
            throw appex::FormatError("cannot parse spec JSON: " + std::string(e.what()));
        }
        const auto spec = appex::experiment_spec_from_json(spec_json);
        const auto bundle = appex::run_experiment(spec, exp_workers);
        const std::string base = exp_out + "/" + spec.name;
        appex::io_detail::open_out(base + "_bundle.json")
            << appex::result_bundle_to_json(bundle, !exp_no_history).dump(2) << '\n';
        appex::save_curves_csv(bundle, base + "_curves.csv");
        Json summary;
        summary["name"] = spec.name;
        summary["failures"] = bundle.failures;
        summary["aggregates"] = Json{{"appex", aggregates_to_json(bundle.final_aggregates)},
                                     {"wot", aggregates_to_json(bundle.wot_aggregates)}};
        std::cout << summary.dump(2) << '\n';
        return 0;
    }

    // graph
    if (!(gr_eps > 0.0)) throw UsageError("eps must be positive");
    Json input;
    try {
        appex::io_detail::open_in(gr_input) >> input;
    } catch (const Json::exception& e) {
        throw appex::FormatError("cannot parse estimates JSON: " + std::string(e.what()));
    }
    const std::string a_key = input.contains("A_hat") ? "A_hat" : "A";
    const std::string h_key = input.contains("H_hat") ? "H_hat" : "H";
    if (!input.contains(a_key) || !input.contains(h_key))
        throw appex::FormatError("estimates JSON must contain A_hat/H_hat (or A/H)");
    const appex::Matrix a = appex::matrix_from_json(input.at(a_key), a_key);
    const appex::Matrix h_raw = appex::matrix_from_json(input.at(h_key), h_key);
    if (a.rows() != a.cols() || h_raw.rows() != h_raw.cols() || a.rows() != h_raw.rows())
        throw appex::FormatError("estimates JSON: A and H must be square with equal size");
    const appex::PsdMatrix h((h_raw + h_raw.transpose()) / 2.0);
    const auto graph = appex::extract_graph(a, h, gr_eps);
    Json out = appex::graph_to_json(graph);
    if (!gr_truth.empty()) {
        Json truth_json;
        try {
            appex::io_detail::open_in(gr_truth) >> truth_json;
        } catch (const Json::exception& e) {
            throw appex::FormatError("cannot parse truth JSON: " + std::string(e.what()));
        }
        appex::CausalGraph truth_graph;
        if (truth_json.contains("edges") || truth_json.contains("confounders")) {
            truth_graph = appex::graph_from_json(truth_json);
        } else {
            const auto truth_params = appex::sde_params_from_json(truth_json);
            truth_graph = appex::extract_graph(truth_params.drift, truth_params.diffusion,
                                               gr_eps);
        }
        out["shd_drift"] = appex::shd_drift(truth_graph, graph);
        out["shd_conf"] = appex::shd_confounders(truth_graph, graph);
    }
    if (!gr_out.empty()) {
        appex::io_detail::open_out(gr_out + ".json") << out.dump(2) << '\n';
        appex::io_detail::open_out(gr_out + ".dot") << appex::graph_to_dot(graph);
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << Json{{"error", {{"type", "usage"}, {"message", e.what()}}}}.dump()
                  << '\n';
        return 2;
    } catch (const appex::FormatError& e) {
        std::cerr << Json{{"error", {{"type", "format"}, {"message", e.what()}}}}.dump()
                  << '\n';
        return 2;
    } catch (const appex::Error& e) {
        std::cerr << Json{{"error", {{"type", "runtime"}, {"message", e.what()}}}}.dump()
                  << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << Json{{"error", {{"type", "internal"}, {"message", e.what()}}}}.dump()
                  << '\n';
        return 1;
    }
}
