#pragma once

#include <cmath>
#include <set>
#include <string>
#include <utility>

#include "appex/linalg.hpp"

namespace appex {

enum class EdgeSign { positive, negative };

struct DirectedEdge {
    int from = 0;
    int to = 0;
    EdgeSign sign = EdgeSign::positive;

    friend auto operator<=>(const DirectedEdge&, const DirectedEdge&) = default;
};

/// Signed drift edges plus unordered latent-confounder pairs.
struct CausalGraph {
    int d = 0;
    std::set<DirectedEdge> directed_edges;
    std::set<std::pair<int, int>> confounder_pairs;  // stored with first < second

    void add_edge(int from, int to, EdgeSign sign) {
        directed_edges.insert({from, to, sign});
    }
    void add_confounder(int i, int j) {
        confounder_pairs.insert({std::min(i, j), std::max(i, j)});
    }
};

/// Thresholded graph extraction: edge i -> j with sign(+) iff A[j,i] > eps,
/// sign(-) iff A[j,i] < -eps; confounder pair {i,j}, i != j, iff |H[i,j]| > eps.
inline CausalGraph extract_graph(const Matrix& drift, const PsdMatrix& diffusion, double eps) {
    require_square(drift, "extract_graph drift");
    if (drift.rows() != diffusion.dim())
        throw DimensionError("extract_graph: drift and diffusion dimensions differ");
    if (!(eps > 0.0)) throw NumericError("extract_graph: eps must be positive");

    const int d = static_cast<int>(drift.rows());
    CausalGraph g;
    g.d = d;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double w = drift(j, i);
            if (w > eps) g.add_edge(i, j, EdgeSign::positive);
            else if (w < -eps) g.add_edge(i, j, EdgeSign::negative);
        }
    }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            if (std::abs(diffusion.mat()(i, j)) > eps) g.add_confounder(i, j);
    return g;
}

namespace detail {

inline int edge_class(const CausalGraph& g, int from, int to) {
    if (g.directed_edges.count({from, to, EdgeSign::positive})) return 1;
    if (g.directed_edges.count({from, to, EdgeSign::negative})) return -1;
    return 0;
}

}  // namespace detail

/// Structural Hamming distance over signed drift edges. Counts ordered
/// pairs (i, j), i != j, whose {+, -, absent} classification differs.
/// Self-loops are deliberately not counted.
inline int shd_drift(const CausalGraph& g_true, const CausalGraph& g_est) {
    if (g_true.d != g_est.d)
        throw DimensionError("shd_drift: graphs have different vertex counts");
    int dist = 0;
    for (int i = 0; i < g_true.d; ++i)
        for (int j = 0; j < g_true.d; ++j)
            if (i != j && detail::edge_class(g_true, i, j) != detail::edge_class(g_est, i, j))
                ++dist;
    return dist;
}

/// Confounder-pair Hamming distance: size of the symmetric difference of
/// the two unordered pair sets.
inline int shd_confounders(const CausalGraph& g_true, const CausalGraph& g_est) {
    if (g_true.d != g_est.d)
        throw DimensionError("shd_confounders: graphs have different vertex counts");
    int dist = 0;
    for (const auto& p : g_true.confounder_pairs)
        if (!g_est.confounder_pairs.count(p)) ++dist;
    for (const auto& p : g_est.confounder_pairs)
        if (!g_true.confounder_pairs.count(p)) ++dist;
    return dist;
}

inline double mean_abs_error(const Matrix& est, const Matrix& truth) {
    if (est.rows() != truth.rows() || est.cols() != truth.cols())
        throw DimensionError("mean_abs_error: shape mismatch");
    return (est - truth).cwiseAbs().mean();
}

/// Pearson correlation over flattened entries. Constant truth has no
/// defined correlation and is rejected.
inline double pearson_corr(const Matrix& est, const Matrix& truth) {
    if (est.rows() != truth.rows() || est.cols() != truth.cols())
        throw DimensionError("pearson_corr: shape mismatch");
    const Eigen::Index n = est.size();
    if (n < 2) throw StatisticsError("pearson_corr: need at least two entries");
    const double mean_e = est.mean();
    const double mean_t = truth.mean();
    const Matrix ce = est.array() - mean_e;
    const Matrix ct = truth.array() - mean_t;
    const double var_t = ct.squaredNorm();
    if (var_t <= 0.0)
        throw StatisticsError("pearson_corr: truth is constant, correlation undefined");
    const double var_e = ce.squaredNorm();
    if (var_e <= 0.0)
        throw StatisticsError("pearson_corr: estimate is constant, correlation undefined");
    return ce.cwiseProduct(ct).sum() / std::sqrt(var_e * var_t);
}

}  // namespace appex
