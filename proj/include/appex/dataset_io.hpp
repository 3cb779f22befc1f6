#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "appex/aeot.hpp"
#include "appex/appex.hpp"
#include "appex/causal.hpp"
#include "appex/sde_model.hpp"
#include "appex/simulate.hpp"

namespace appex {

using Json = nlohmann::json;

namespace io_detail {

/// Shortest representation that round-trips a double exactly.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open for reading: " + path);
    return in;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("invalid number '" + s + "' in " + context);
    }
}

/// Replaces a trailing .csv (if any) with .json for the sidecar path.
inline std::string sidecar_path(const std::string& csv_path) {
    if (csv_path.size() >= 4 && csv_path.substr(csv_path.size() - 4) == ".csv")
        return csv_path.substr(0, csv_path.size() - 4) + ".json";
    return csv_path + ".json";
}

}  // namespace io_detail

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& name) {
    if (!j.is_array() || j.empty() || !j.front().is_array())
        throw FormatError(name + ": expected a non-empty array of arrays");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw FormatError(name + ": ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& cell = row[static_cast<std::size_t>(c)];
            if (!cell.is_number()) throw FormatError(name + ": non-numeric entry");
            m(i, c) = cell.get<double>();
        }
    }
    return m;
}

// ---- SdeParams <-> JSON: {"d": int, "A": [[..]], "H": [[..]], "G": [[..]]?} ----

inline Json sde_params_to_json(const SdeParams& params) {
    Json j;
    j["d"] = params.dim();
    j["A"] = matrix_to_json(params.drift);
    j["H"] = matrix_to_json(params.diffusion.mat());
    if (params.noise_factor) j["G"] = matrix_to_json(*params.noise_factor);
    return j;
}

inline SdeParams sde_params_from_json(const Json& j) {
    if (!j.contains("A") || !j.contains("H"))
        throw FormatError("SDE parameters: missing required key 'A' or 'H'");
    Matrix a = matrix_from_json(j.at("A"), "A");
    Matrix h = matrix_from_json(j.at("H"), "H");
    if (j.contains("d") && j.at("d").get<Eigen::Index>() != a.rows())
        throw FormatError("SDE parameters: 'd' disagrees with the shape of 'A'");
    std::optional<Matrix> g;
    if (j.contains("G")) g = matrix_from_json(j.at("G"), "G");
    try {
        return SdeParams(std::move(a), PsdMatrix(std::move(h)), std::move(g));
    } catch (const Error& e) {
        throw FormatError(std::string("SDE parameters: ") + e.what());
    }
}

inline void save_sde_params(const SdeParams& params, const std::string& path) {
    io_detail::open_out(path) << sde_params_to_json(params).dump(2) << '\n';
}

inline SdeParams load_sde_params(const std::string& path) {
    Json j;
    try {
        io_detail::open_in(path) >> j;
    } catch (const Json::exception& e) {
        throw FormatError("cannot parse JSON from " + path + ": " + e.what());
    }
    return sde_params_from_json(j);
}

// ---- MarginalDataset <-> CSV (`time,sample_id,x1,...,xd`) + JSON sidecar ----

inline void save_marginals(const MarginalDataset& data, const std::string& csv_path) {
    data.validate();
    const int d = data.dim();
    auto out = io_detail::open_out(csv_path);
    out << "time,sample_id";
    for (int c = 0; c < d; ++c) out << ",x" << (c + 1);
    out << '\n';
    for (const auto& snap : data.snapshots) {
        const std::string t = io_detail::format_double(snap.time);
        for (Eigen::Index r = 0; r < snap.samples.rows(); ++r) {
            out << t << ',' << r;
            for (Eigen::Index c = 0; c < snap.samples.cols(); ++c)
                out << ',' << io_detail::format_double(snap.samples(r, c));
            out << '\n';
        }
    }

    Json side;
    side["d"] = d;
    side["times"] = Json::array();
    side["counts"] = Json::array();
    for (const auto& snap : data.snapshots) {
        side["times"].push_back(snap.time);
        side["counts"].push_back(snap.samples.rows());
    }
    io_detail::open_out(io_detail::sidecar_path(csv_path)) << side.dump(2) << '\n';
}

inline MarginalDataset load_marginals(const std::string& csv_path) {
    auto in = io_detail::open_in(csv_path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(csv_path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = io_detail::split_csv_line(line);
    std::vector<std::string> expected = {"time", "sample_id"};
    for (std::size_t c = 2; c < header.size(); ++c)
        expected.push_back("x" + std::to_string(c - 1));
    if (header.size() < 3 || header[0] != "time" || header[1] != "sample_id")
        throw FormatError(csv_path + ": missing column '" +
                          (header.empty() || header[0] != "time"
                               ? std::string("time")
                               : (header.size() < 2 || header[1] != "sample_id"
                                      ? std::string("sample_id")
                                      : std::string("x1"))) +
                          "' (expected header time,sample_id,x1,...,xd)");
    for (std::size_t c = 2; c < header.size(); ++c)
        if (header[c] != expected[c])
            throw FormatError(csv_path + ": missing column '" + expected[c] +
                              "' (found '" + header[c] + "')");
    const int d = static_cast<int>(header.size()) - 2;

    MarginalDataset data;
    std::vector<Vector> block;
    double block_time = 0.0;
    bool have_block = false;
    auto flush = [&]() {
        if (!have_block) return;
        Matrix samples(static_cast<Eigen::Index>(block.size()), d);
        for (std::size_t r = 0; r < block.size(); ++r)
            samples.row(static_cast<Eigen::Index>(r)) = block[r].transpose();
        data.snapshots.push_back(Snapshot{block_time, std::move(samples)});
        block.clear();
    };
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = io_detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw FormatError(csv_path + ":" + std::to_string(line_no) +
                              ": expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        const std::string ctx = csv_path + ":" + std::to_string(line_no);
        const double t = io_detail::parse_double(fields[0], ctx);
        Vector x(d);
        for (int c = 0; c < d; ++c)
            x[c] = io_detail::parse_double(fields[static_cast<std::size_t>(c) + 2], ctx);
        if (!have_block || t != block_time) {
            flush();
            block_time = t;
            have_block = true;
        }
        block.push_back(std::move(x));
    }
    flush();
    if (data.snapshots.empty()) throw FormatError(csv_path + ": no data rows");
    try {
        data.validate();
    } catch (const Error& e) {
        throw FormatError(csv_path + ": " + e.what());
    }
    return data;
}

// ---- TrajectorySet -> CSV (`time,path_id,x1,...,xd`) ----

inline void save_trajectories(const TrajectorySet& traj, const std::string& csv_path) {
    const int d = traj.dim();
    auto out = io_detail::open_out(csv_path);
    out << "time,path_id";
    for (int c = 0; c < d; ++c) out << ",x" << (c + 1);
    out << '\n';
    for (std::size_t i = 0; i < traj.n_times(); ++i) {
        const std::string t = io_detail::format_double(traj.times[i]);
        for (Eigen::Index p = 0; p < traj.n_paths(); ++p) {
            out << t << ',' << p;
            for (Eigen::Index c = 0; c < traj.states[i].cols(); ++c)
                out << ',' << io_detail::format_double(traj.states[i](p, c));
            out << '\n';
        }
    }
}

// ---- Coupling -> CSV (row, col, mass), debugging aid ----

inline void save_coupling(const Coupling& coupling, const std::string& csv_path) {
    auto out = io_detail::open_out(csv_path);
    out << "row,col,mass\n";
    for (Eigen::Index r = 0; r < coupling.plan.rows(); ++r)
        for (Eigen::Index c = 0; c < coupling.plan.cols(); ++c)
            out << r << ',' << c << ',' << io_detail::format_double(coupling.plan(r, c))
                << '\n';
}

// ---- CausalGraph <-> JSON and Graphviz ----

inline Json graph_to_json(const CausalGraph& g) {
    Json j;
    j["d"] = g.d;
    j["edges"] = Json::array();
    for (const auto& e : g.directed_edges)
        j["edges"].push_back({{"from", e.from},
                              {"to", e.to},
                              {"sign", e.sign == EdgeSign::positive ? "+" : "-"}});
    j["confounders"] = Json::array();
    for (const auto& p : g.confounder_pairs)
        j["confounders"].push_back({p.first, p.second});
    return j;
}

inline CausalGraph graph_from_json(const Json& j) {
    if (!j.contains("d")) throw FormatError("causal graph: missing key 'd'");
    CausalGraph g;
    g.d = j.at("d").get<int>();
    for (const auto& e : j.value("edges", Json::array())) {
        const std::string sign = e.at("sign").get<std::string>();
        if (sign != "+" && sign != "-")
            throw FormatError("causal graph: edge sign must be '+' or '-'");
        g.add_edge(e.at("from").get<int>(), e.at("to").get<int>(),
                   sign == "+" ? EdgeSign::positive : EdgeSign::negative);
    }
    for (const auto& p : j.value("confounders", Json::array())) {
        if (!p.is_array() || p.size() != 2)
            throw FormatError("causal graph: confounder entries must be pairs");
        g.add_confounder(p[0].get<int>(), p[1].get<int>());
    }
    return g;
}

/// Graphviz rendering: solid signed edges for the drift, dashed edges from
/// synthetic nodes U_{i,j} for latent pairwise confounders.
inline std::string graph_to_dot(const CausalGraph& g) {
    std::ostringstream out;
    out << "digraph causal {\n";
    for (int i = 0; i < g.d; ++i) out << "  x" << i << " [shape=circle];\n";
    for (const auto& e : g.directed_edges)
        out << "  x" << e.from << " -> x" << e.to << " [label=\""
            << (e.sign == EdgeSign::positive ? '+' : '-') << "\"];\n";
    for (const auto& p : g.confounder_pairs) {
        const std::string u = "U_" + std::to_string(p.first) + "_" + std::to_string(p.second);
        out << "  " << u << " [label=\"U_{" << p.first << ',' << p.second
            << "}\", style=dashed];\n";
        out << "  " << u << " -> x" << p.first << " [style=dashed];\n";
        out << "  " << u << " -> x" << p.second << " [style=dashed];\n";
    }
    out << "}\n";
    return out.str();
}

// ---- Iteration history -> JSON lines ----

inline Json iteration_record_to_json(const IterationRecord& rec) {
    Json j;
    j["iter"] = rec.iter;
    j["A_hat"] = matrix_to_json(rec.drift);
    j["H_hat"] = matrix_to_json(rec.diffusion.mat());
    j["nll"] = rec.nll;
    j["sinkhorn_residuals"] = rec.sinkhorn_residuals;
    j["wall_time"] = rec.wall_seconds;
    return j;
}

inline void save_history(const std::vector<IterationRecord>& history,
                         const std::string& path) {
    auto out = io_detail::open_out(path);
    for (const auto& rec : history) out << iteration_record_to_json(rec).dump() << '\n';
}

}  // namespace appex
