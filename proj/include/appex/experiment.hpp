#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "appex/appex.hpp"
#include "appex/causal.hpp"
#include "appex/dataset_io.hpp"
#include "appex/parallel.hpp"
#include "appex/sde_model.hpp"
#include "appex/simulate.hpp"

namespace appex {

enum class ExperimentKind {
    example1a, example1b, example2a, example2b, example3a, example3b,
    random_dense, causal_sufficient, latent_confounded,
};

inline std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::example1a: return "example1a";
        case ExperimentKind::example1b: return "example1b";
        case ExperimentKind::example2a: return "example2a";
        case ExperimentKind::example2b: return "example2b";
        case ExperimentKind::example3a: return "example3a";
        case ExperimentKind::example3b: return "example3b";
        case ExperimentKind::random_dense: return "random_dense";
        case ExperimentKind::causal_sufficient: return "causal_sufficient";
        case ExperimentKind::latent_confounded: return "latent_confounded";
    }
    return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
    for (const auto kind :
         {ExperimentKind::example1a, ExperimentKind::example1b, ExperimentKind::example2a,
          ExperimentKind::example2b, ExperimentKind::example3a, ExperimentKind::example3b,
          ExperimentKind::random_dense, ExperimentKind::causal_sufficient,
          ExperimentKind::latent_confounded})
        if (to_string(kind) == s) return kind;
    throw FormatError("unknown experiment kind '" + s + "'");
}

/// Fixed SDE + resolving initial distribution for the worked example pairs;
/// nullopt for the random kinds.
inline std::optional<std::pair<SdeParams, InitialDistribution>> experiment_fixture(
    ExperimentKind kind) {
    auto mat = [](std::initializer_list<std::initializer_list<double>> rows) {
        const auto r = static_cast<Eigen::Index>(rows.size());
        const auto c = static_cast<Eigen::Index>(rows.begin()->size());
        Matrix m(r, c);
        Eigen::Index i = 0;
        for (const auto& row : rows) {
            Eigen::Index j = 0;
            for (const double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    };
    auto vec2 = [](double a, double b) {
        Vector v(2);
        v << a, b;
        return v;
    };
    switch (kind) {
        case ExperimentKind::example1a:
            return std::pair{SdeParams::from_factor(mat({{-1.0}}), mat({{1.0}})),
                             InitialDistribution::point(Vector::Ones(1))};
        case ExperimentKind::example1b:
            return std::pair{
                SdeParams::from_factor(mat({{-10.0}}), mat({{std::sqrt(10.0)}})),
                InitialDistribution::point(Vector::Ones(1))};
        case ExperimentKind::example2a:
            return std::pair{
                SdeParams::from_factor(mat({{0.0, 0.0}, {0.0, 0.0}}),
                                       Matrix::Identity(2, 2)),
                InitialDistribution::uniform({vec2(2.0, 0.0), vec2(2.0, 0.1)})};
        case ExperimentKind::example2b:
            return std::pair{
                SdeParams::from_factor(mat({{0.0, 1.0}, {-1.0, 0.0}}),
                                       Matrix::Identity(2, 2)),
                InitialDistribution::uniform({vec2(2.0, 0.0), vec2(2.0, 0.1)})};
        case ExperimentKind::example3a:
            return std::pair{
                SdeParams::from_factor(mat({{1.0, 2.0}, {1.0, 0.0}}),
                                       mat({{1.0, 2.0}, {-1.0, -2.0}})),
                InitialDistribution::uniform({vec2(1.0, 0.0), vec2(0.0, 1.0)})};
        case ExperimentKind::example3b:
            return std::pair{
                SdeParams::from_factor(mat({{1.0 / 3.0, 4.0 / 3.0}, {2.0 / 3.0, -1.0 / 3.0}}),
                                       mat({{1.0, 2.0}, {-1.0, -2.0}})),
                InitialDistribution::uniform({vec2(1.0, 0.0), vec2(0.0, 1.0)})};
        default:
            return std::nullopt;
    }
}

struct ExperimentSpec {
    std::string name = "experiment";
    ExperimentKind kind = ExperimentKind::random_dense;
    int d = 3;
    int n_replicates = 10;
    int n_samples = 500;  // M observations per marginal
    double dt_em = 0.01;
    int n_steps = 100;
    double dt_obs = 0.05;
    int n_marginals = 20;
    double edge_prob = 0.25;
    double eps = 0.5;
    std::uint64_t seed = 0;
    AppexConfig appex;  // sigma0_sq == 0 means: draw tr(H)/d * 10^Unif(-1,1)

    void validate() const {
        if (d < 1 || n_replicates < 1 || n_samples < 2 || n_steps < 1 || n_marginals < 1)
            throw FormatError("experiment spec: counts must be positive (and M >= 2)");
        if (!(dt_em > 0.0) || !(dt_obs > 0.0))
            throw FormatError("experiment spec: time steps must be positive");
        const double ratio = dt_obs / dt_em;
        if (std::abs(ratio - std::lround(ratio)) > 1e-9 * std::max(1.0, ratio))
            throw FormatError("experiment spec: dt_obs must be an integer multiple of dt_em");
        if (!(eps > 0.0)) throw FormatError("experiment spec: eps must be positive");
        if (const auto fixture = experiment_fixture(kind)) {
            if (d != fixture->first.dim())
                throw FormatError("experiment spec: kind " + to_string(kind) +
                                  " has fixed dimension " +
                                  std::to_string(fixture->first.dim()));
        }
    }
};

struct ReplicateMetrics {
    double mae_drift = std::numeric_limits<double>::quiet_NaN();
    double mae_diffusion = std::numeric_limits<double>::quiet_NaN();
    double corr_drift = std::numeric_limits<double>::quiet_NaN();
    double corr_diffusion = std::numeric_limits<double>::quiet_NaN();
    int shd_drift_count = 0;
    int shd_confounder_count = 0;
};

struct ReplicateResult {
    bool ok = false;
    std::string error;
    Matrix drift_true;
    Matrix diffusion_true;
    Matrix drift_hat;
    Matrix diffusion_hat;
    double sigma0_sq = 0.0;
    std::vector<IterationRecord> history;
    std::vector<ReplicateMetrics> per_iteration;  // one per history record
    ReplicateMetrics final_metrics;
    ReplicateMetrics wot_metrics;  // iteration 1
};

struct Aggregate {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    int count = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
    Aggregate agg;
    double sum = 0.0;
    for (const double v : values)
        if (std::isfinite(v)) {
            sum += v;
            ++agg.count;
        }
    if (agg.count == 0) return agg;
    agg.mean = sum / agg.count;
    if (agg.count == 1) {
        agg.se = 0.0;
        return agg;
    }
    double ss = 0.0;
    for (const double v : values)
        if (std::isfinite(v)) ss += (v - agg.mean) * (v - agg.mean);
    agg.se = std::sqrt(ss / (agg.count - 1)) / std::sqrt(static_cast<double>(agg.count));
    return agg;
}

struct MetricAggregates {
    Aggregate mae_drift, mae_diffusion, corr_drift, corr_diffusion, shd_drift_agg,
        shd_confounder_agg;
};

struct ResultBundle {
    ExperimentSpec spec;
    std::vector<ReplicateResult> replicates;
    MetricAggregates final_aggregates;
    MetricAggregates wot_aggregates;
    int failures = 0;
    std::vector<std::string> warnings;

    /// Per-iteration means across successful replicates (n_iters rows).
    std::vector<ReplicateMetrics> curves;
};

namespace detail {

inline double corr_or_nan(const Matrix& est, const Matrix& truth) {
    try {
        return pearson_corr(est, truth);
    } catch (const StatisticsError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

inline ReplicateMetrics metrics_against(const Matrix& drift_hat, const PsdMatrix& diff_hat,
                                        const Matrix& drift_true, const PsdMatrix& diff_true,
                                        const CausalGraph& truth_graph, double eps) {
    ReplicateMetrics m;
    m.mae_drift = mean_abs_error(drift_hat, drift_true);
    m.mae_diffusion = mean_abs_error(diff_hat.mat(), diff_true.mat());
    m.corr_drift = corr_or_nan(drift_hat, drift_true);
    m.corr_diffusion = corr_or_nan(diff_hat.mat(), diff_true.mat());
    const CausalGraph est = extract_graph(drift_hat, diff_hat, eps);
    m.shd_drift_count = shd_drift(truth_graph, est);
    m.shd_confounder_count = shd_confounders(truth_graph, est);
    return m;
}

}  // namespace detail

/// One full replicate: draw (or fix) the system, simulate, destroy path
/// identity, run the estimation loop, score every iteration against truth.
inline ReplicateResult run_replicate(const ExperimentSpec& spec, int replicate) {
    const std::uint64_t base = derive_seed(spec.seed, static_cast<std::uint64_t>(replicate));
    ReplicateResult out;
    try {
        std::optional<CausalGraph> truth_graph;
        std::optional<SdeParams> params;
        std::optional<InitialDistribution> p0;
        if (const auto fixture = experiment_fixture(spec.kind)) {
            params = fixture->first;
            p0 = fixture->second;
        } else {
            const SdeKind kind = spec.kind == ExperimentKind::random_dense
                                     ? SdeKind::dense
                                     : (spec.kind == ExperimentKind::causal_sufficient
                                            ? SdeKind::causal_sufficient
                                            : SdeKind::latent_confounded);
            GeneratedSde gen =
                gen_random_sde(spec.d, kind, spec.edge_prob, derive_seed(base, 0));
            truth_graph = std::move(gen.graph);
            params = std::move(gen.params);
            p0 = gen_default_initial(spec.d, derive_seed(base, 1));
        }
        if (!truth_graph)
            truth_graph = extract_graph(params->drift, params->diffusion, spec.eps);

        double sigma0 = spec.appex.sigma0_sq;
        if (!(sigma0 > 0.0)) {
            Rng rng(derive_seed(base, 4));
            const double trace_normalized =
                params->diffusion.mat().trace() / static_cast<double>(params->dim());
            sigma0 = trace_normalized * std::pow(10.0, rng.uniform(-1.0, 1.0));
        }

        const TrajectorySet traj =
            euler_maruyama(*params, *p0, spec.dt_em, spec.n_steps, spec.n_samples,
                           derive_seed(base, 2));
        const MarginalDataset data =
            subsample_marginals(traj, spec.dt_obs, spec.n_marginals, derive_seed(base, 3));

        AppexConfig config = spec.appex;
        config.sigma0_sq = sigma0;
        config.seed = derive_seed(base, 5);
        const AppexResult result = run_appex(data, config);

        out.drift_true = params->drift;
        out.diffusion_true = params->diffusion.mat();
        out.drift_hat = result.drift;
        out.diffusion_hat = result.diffusion.mat();
        out.sigma0_sq = sigma0;
        out.history = result.history;
        out.per_iteration.reserve(result.history.size());
        for (const auto& rec : result.history)
            out.per_iteration.push_back(detail::metrics_against(
                rec.drift, rec.diffusion, params->drift, params->diffusion, *truth_graph,
                spec.eps));
        out.final_metrics = out.per_iteration.back();
        out.wot_metrics = out.per_iteration.front();
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

namespace detail {

template <typename Get>
Aggregate aggregate_metric(const std::vector<ReplicateResult>& reps, bool wot, Get get) {
    std::vector<double> values;
    for (const auto& r : reps)
        if (r.ok) values.push_back(get(wot ? r.wot_metrics : r.final_metrics));
    return aggregate(values);
}

inline MetricAggregates aggregate_all(const std::vector<ReplicateResult>& reps, bool wot) {
    MetricAggregates agg;
    agg.mae_drift = aggregate_metric(reps, wot, [](const auto& m) { return m.mae_drift; });
    agg.mae_diffusion =
        aggregate_metric(reps, wot, [](const auto& m) { return m.mae_diffusion; });
    agg.corr_drift = aggregate_metric(reps, wot, [](const auto& m) { return m.corr_drift; });
    agg.corr_diffusion =
        aggregate_metric(reps, wot, [](const auto& m) { return m.corr_diffusion; });
    agg.shd_drift_agg = aggregate_metric(
        reps, wot, [](const auto& m) { return static_cast<double>(m.shd_drift_count); });
    agg.shd_confounder_agg = aggregate_metric(
        reps, wot, [](const auto& m) { return static_cast<double>(m.shd_confounder_count); });
    return agg;
}

}  // namespace detail

/// Runs all replicates (optionally on a worker pool; per-replicate seeds are
/// derived from (seed, replicate), so parallel and serial schedules produce
/// identical bundles) and aggregates the metrics.
inline ResultBundle run_experiment(const ExperimentSpec& spec, unsigned workers = 1) {
    spec.validate();
    ResultBundle bundle;
    bundle.spec = spec;
    bundle.replicates.resize(static_cast<std::size_t>(spec.n_replicates));
    parallel_for(static_cast<std::size_t>(spec.n_replicates), workers, [&](std::size_t r) {
        bundle.replicates[r] = run_replicate(spec, static_cast<int>(r));
    });
    for (const auto& r : bundle.replicates)
        if (!r.ok) ++bundle.failures;
    bundle.final_aggregates = detail::aggregate_all(bundle.replicates, false);
    bundle.wot_aggregates = detail::aggregate_all(bundle.replicates, true);
    if (spec.n_replicates == 1)
        bundle.warnings.push_back("single replicate: standard errors reported as 0");
    if (bundle.failures > 0)
        bundle.warnings.push_back(std::to_string(bundle.failures) + " replicate(s) failed");

    // Per-iteration mean curves; replicates that stopped early repeat their
    // final record.
    const std::size_t n_rows = static_cast<std::size_t>(spec.appex.n_iters);
    bundle.curves.resize(n_rows);
    for (std::size_t it = 0; it < n_rows; ++it) {
        std::vector<double> ma, mh, ca, ch;
        for (const auto& r : bundle.replicates) {
            if (!r.ok || r.per_iteration.empty()) continue;
            const auto& m = r.per_iteration[std::min(it, r.per_iteration.size() - 1)];
            ma.push_back(m.mae_drift);
            mh.push_back(m.mae_diffusion);
            ca.push_back(m.corr_drift);
            ch.push_back(m.corr_diffusion);
        }
        bundle.curves[it].mae_drift = aggregate(ma).mean;
        bundle.curves[it].mae_diffusion = aggregate(mh).mean;
        bundle.curves[it].corr_drift = aggregate(ca).mean;
        bundle.curves[it].corr_diffusion = aggregate(ch).mean;
    }
    return bundle;
}

// ---- spec / bundle serialization ----

inline Json appex_config_to_json(const AppexConfig& c) {
    Json j;
    j["n_iters"] = c.n_iters;
    if (c.sigma0_sq > 0.0) j["sigma0_sq"] = c.sigma0_sq;
    j["kernel_scheme"] = !c.kernel_scheme ? "auto"
                         : (*c.kernel_scheme == KernelScheme::exact ? "exact" : "linearized");
    j["estimation_source"] = c.estimation_source == EstimationSource::coupling_moments
                                 ? "coupling_moments"
                                 : "sampled_paths";
    j["n_sampled_paths"] = c.n_sampled_paths;
    j["sinkhorn_mode"] = !c.sinkhorn_mode ? "auto"
                         : (*c.sinkhorn_mode == SinkhornMode::standard ? "standard"
                                                                       : "log_domain");
    j["sinkhorn_tol"] = c.sinkhorn_tol;
    j["sinkhorn_max_iter"] = c.sinkhorn_max_iter;
    j["lam_rel"] = c.lam_rel;
    j["stop_tol"] = c.stop_tol;
    return j;
}

inline AppexConfig appex_config_from_json(const Json& j) {
    AppexConfig c;
    c.n_iters = j.value("n_iters", c.n_iters);
    c.sigma0_sq = j.value("sigma0_sq", 0.0);
    const std::string scheme = j.value("kernel_scheme", "auto");
    if (scheme == "exact") c.kernel_scheme = KernelScheme::exact;
    else if (scheme == "linearized") c.kernel_scheme = KernelScheme::linearized;
    else if (scheme != "auto") throw FormatError("unknown kernel_scheme '" + scheme + "'");
    const std::string source = j.value("estimation_source", "coupling_moments");
    if (source == "coupling_moments")
        c.estimation_source = EstimationSource::coupling_moments;
    else if (source == "sampled_paths")
        c.estimation_source = EstimationSource::sampled_paths;
    else throw FormatError("unknown estimation_source '" + source + "'");
    c.n_sampled_paths = j.value("n_sampled_paths", c.n_sampled_paths);
    const std::string mode = j.value("sinkhorn_mode", "auto");
    if (mode == "standard") c.sinkhorn_mode = SinkhornMode::standard;
    else if (mode == "log_domain") c.sinkhorn_mode = SinkhornMode::log_domain;
    else if (mode != "auto") throw FormatError("unknown sinkhorn_mode '" + mode + "'");
    c.sinkhorn_tol = j.value("sinkhorn_tol", c.sinkhorn_tol);
    c.sinkhorn_max_iter = j.value("sinkhorn_max_iter", c.sinkhorn_max_iter);
    c.lam_rel = j.value("lam_rel", c.lam_rel);
    c.stop_tol = j.value("stop_tol", c.stop_tol);
    return c;
}

inline Json experiment_spec_to_json(const ExperimentSpec& s) {
    Json j;
    j["name"] = s.name;
    j["kind"] = to_string(s.kind);
    j["d"] = s.d;
    j["n_replicates"] = s.n_replicates;
    j["M"] = s.n_samples;
    j["dt_em"] = s.dt_em;
    j["n_steps"] = s.n_steps;
    j["dt_obs"] = s.dt_obs;
    j["n_marginals"] = s.n_marginals;
    j["edge_prob"] = s.edge_prob;
    j["eps"] = s.eps;
    j["seed"] = s.seed;
    j["appex"] = appex_config_to_json(s.appex);
    return j;
}

inline ExperimentSpec experiment_spec_from_json(const Json& j) {
    ExperimentSpec s;
    if (!j.contains("kind")) throw FormatError("experiment spec: missing key 'kind'");
    s.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    s.name = j.value("name", to_string(s.kind));
    if (const auto fixture = experiment_fixture(s.kind)) s.d = fixture->first.dim();
    s.d = j.value("d", s.d);
    s.n_replicates = j.value("n_replicates", s.n_replicates);
    s.n_samples = j.value("M", s.n_samples);
    s.dt_em = j.value("dt_em", s.dt_em);
    s.n_steps = j.value("n_steps", s.n_steps);
    s.dt_obs = j.value("dt_obs", s.dt_obs);
    s.n_marginals = j.value("n_marginals", s.n_marginals);
    s.edge_prob = j.value("edge_prob", s.edge_prob);
    s.eps = j.value("eps", s.eps);
    s.seed = j.value("seed", s.seed);
    if (j.contains("appex")) s.appex = appex_config_from_json(j.at("appex"));
    s.validate();
    return s;
}

inline Json metrics_to_json(const ReplicateMetrics& m) {
    return Json{{"mae_A", m.mae_drift},
                {"mae_H", m.mae_diffusion},
                {"corr_A", m.corr_drift},
                {"corr_H", m.corr_diffusion},
                {"shd_drift", m.shd_drift_count},
                {"shd_conf", m.shd_confounder_count}};
}

inline Json aggregates_to_json(const MetricAggregates& a) {
    auto one = [](const Aggregate& g) {
        return Json{{"mean", g.mean}, {"se", g.se}, {"count", g.count}};
    };
    return Json{{"mae_A", one(a.mae_drift)},
                {"mae_H", one(a.mae_diffusion)},
                {"corr_A", one(a.corr_drift)},
                {"corr_H", one(a.corr_diffusion)},
                {"shd_drift", one(a.shd_drift_agg)},
                {"shd_conf", one(a.shd_confounder_agg)}};
}

inline Json result_bundle_to_json(const ResultBundle& bundle, bool include_history = true) {
    Json j;
    j["spec"] = experiment_spec_to_json(bundle.spec);
    j["failures"] = bundle.failures;
    j["warnings"] = bundle.warnings;
    j["replicates"] = Json::array();
    for (const auto& r : bundle.replicates) {
        Json jr;
        jr["ok"] = r.ok;
        if (!r.ok) {
            jr["error"] = r.error;
        } else {
            jr["A_true"] = matrix_to_json(r.drift_true);
            jr["H_true"] = matrix_to_json(r.diffusion_true);
            jr["A_hat"] = matrix_to_json(r.drift_hat);
            jr["H_hat"] = matrix_to_json(r.diffusion_hat);
            jr["sigma0_sq"] = r.sigma0_sq;
            jr["metrics"] = metrics_to_json(r.final_metrics);
            jr["wot_metrics"] = metrics_to_json(r.wot_metrics);
            if (include_history) {
                jr["history"] = Json::array();
                for (const auto& rec : r.history)
                    jr["history"].push_back(iteration_record_to_json(rec));
            }
        }
        j["replicates"].push_back(std::move(jr));
    }
    j["aggregates"] = Json{{"appex", aggregates_to_json(bundle.final_aggregates)},
                           {"wot", aggregates_to_json(bundle.wot_aggregates)}};
    return j;
}

/// Plot data behind the per-iteration MAE/correlation figures.
inline void save_curves_csv(const ResultBundle& bundle, const std::string& path) {
    auto out = io_detail::open_out(path);
    out << "iteration,mae_A,mae_H,corr_A,corr_H\n";
    for (std::size_t i = 0; i < bundle.curves.size(); ++i) {
        const auto& m = bundle.curves[i];
        out << (i + 1) << ',' << io_detail::format_double(m.mae_drift) << ','
            << io_detail::format_double(m.mae_diffusion) << ','
            << io_detail::format_double(m.corr_drift) << ','
            << io_detail::format_double(m.corr_diffusion) << '\n';
    }
}

}  // namespace appex
