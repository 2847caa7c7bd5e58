#pragma once

// Report serialization. Every floating-point value is written with 17 significant digits and
// object keys keep insertion order, so identical runs produce identical bytes.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>

#include "modupdate/config.hpp"

namespace modupdate {

inline std::string format_double(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV flavour: non-finite values are spelled out.
inline std::string format_csv_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return format_double(v);
}

namespace detail {

inline void write_json_string(std::ostream& out, const std::string& s) {
    out << ordered_json(s).dump();
}

inline void write_json(std::ostream& out, const ordered_json& j, int indent, int level) {
    const std::string pad(static_cast<std::size_t>(indent * (level + 1)), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent * level), ' ');
    switch (j.type()) {
        case ordered_json::value_t::object: {
            if (j.empty()) {
                out << "{}";
                return;
            }
            out << "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out << ",\n";
                first = false;
                out << pad;
                write_json_string(out, it.key());
                out << ": ";
                write_json(out, it.value(), indent, level + 1);
            }
            out << '\n' << close_pad << '}';
            return;
        }
        case ordered_json::value_t::array: {
            if (j.empty()) {
                out << "[]";
                return;
            }
            // Arrays of scalars stay on one line.
            bool scalars = true;
            for (const auto& e : j) scalars &= !e.is_structured();
            if (scalars) {
                out << '[';
                for (std::size_t i = 0; i < j.size(); ++i) {
                    if (i) out << ", ";
                    write_json(out, j[i], indent, level + 1);
                }
                out << ']';
                return;
            }
            out << "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out << ",\n";
                out << pad;
                write_json(out, j[i], indent, level + 1);
            }
            out << '\n' << close_pad << ']';
            return;
        }
        case ordered_json::value_t::number_float:
            out << format_double(j.get<double>());
            return;
        default:
            out << j.dump();
    }
}

}  // namespace detail

inline std::string to_json_text(const ordered_json& j, int indent = 2) {
    std::ostringstream out;
    detail::write_json(out, j, indent, 0);
    out << '\n';
    return out.str();
}

inline ordered_json to_json(const Vector& v) {
    ordered_json a = ordered_json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

/// Row-major list of rows.
inline ordered_json to_json(const Matrix& m) {
    ordered_json a = ordered_json::array();
    for (Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
    return a;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// ---------------------------------------------------------------------------------------------
// Update reports

struct MinimumReport {
    const MinimumRecord* record = nullptr;
    int depth = 0;
    ReliabilityReport reliability;
    EllipsoidSet ellipsoid;
};

inline std::vector<MinimumReport> analyse(const UpdatingProblem& problem, const MinimaRegistry& reg,
                                          const Thresholds& t) {
    std::vector<MinimumReport> out;
    for (std::size_t i = 0; i < reg.size(); ++i)
        out.push_back({&reg.records[i], reg.depths[i], reliability(problem, reg.records[i], t), reg.ellipsoids[i]});
    return out;
}

inline ordered_json minima_json(const UpdatingProblem& problem, const MinimaRegistry& reg,
                                const std::vector<MinimumReport>& reports) {
    const auto& labels = problem.pencil().labels();
    ordered_json j;
    ordered_json prob;
    prob["dofs"] = problem.pencil().dofs();
    prob["parameters"] = labels;
    prob["units"] = problem.pencil().units();
    prob["lower"] = to_json(problem.box().lower);
    prob["upper"] = to_json(problem.box().upper);
    prob["targets"] = to_json(problem.targets());
    prob["weights"] = to_json(problem.weights());
    prob["epsilon"] = problem.epsilon();
    j["problem"] = prob;

    ordered_json s;
    s["local_solves"] = reg.local_solves;
    s["evaluations"] = reg.evaluations;
    s["boundary_rejects"] = reg.boundary_rejects;
    s["duplicate_rejects"] = reg.duplicate_rejects;
    s["unconverged"] = reg.unconverged;
    s["failed_subproblems"] = reg.failures.size();
    s["degraded_tests"] = reg.degraded_tests;
    s["max_depth_reached"] = reg.max_depth_reached;
    s["budget_exhausted"] = reg.budget_exhausted;
    j["search"] = s;
    j["global_index"] = reg.global_index;

    ordered_json minima = ordered_json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const MinimumReport& rep = reports[i];
        const MinimumRecord& r = *rep.record;
        ordered_json m;
        m["index"] = i;
        m["depth"] = rep.depth;
        m["x"] = to_json(r.x_star);
        m["phi"] = r.phi;
        m["frequencies"] = to_json(r.freqs);
        m["converged"] = r.converged;
        m["iterations"] = r.iterations;
        m["evaluations"] = r.evaluations;
        m["projected_gradient"] = r.projected_gradient;
        ordered_json bounds = ordered_json::array();
        for (const auto& b : r.active_bounds)
            bounds.push_back({{"parameter", labels[static_cast<std::size_t>(b.index)]},
                              {"side", b.side == BoundSide::Lower ? "lower" : "upper"},
                              {"face", b.original_face ? "domain" : "subdivision"}});
        m["active_bounds"] = bounds;
        m["jacobian_valid"] = r.jacobian_valid;
        m["scaled_jacobian"] = to_json(rep.reliability.scaled.Js);
        m["svd"] = {{"singular_values", to_json(rep.reliability.singular_values)},
                    {"V", to_json(rep.reliability.right_vectors)}};
        ordered_json params = ordered_json::array();
        for (const auto& p : rep.reliability.params)
            params.push_back({{"label", p.label},
                              {"zeta", p.zeta},
                              {"eta", p.eta},
                              {"inv_zeta", p.inv_zeta},
                              {"inv_eta", p.inv_eta},
                              {"class", to_string(p.cls)},
                              {"eta_path", to_string(p.eta_path)},
                              {"eta_degraded", p.eta_degraded},
                              {"weighted_zeta", p.weighted_zeta},
                              {"weighted_eta", p.weighted_eta}});
        m["parameters"] = params;
        m["ellipsoid"] = {{"sigma", to_json(rep.ellipsoid.sigma)},
                          {"U", to_json(rep.ellipsoid.U)},
                          {"coord_scale", to_json(rep.ellipsoid.coord_scale)},
                          {"epsilon", rep.ellipsoid.epsilon},
                          {"degraded", rep.ellipsoid.degraded}};
        minima.push_back(m);
    }
    j["minima"] = minima;
    return j;
}

/// One row per minimum; values are the same doubles written to minima.json.
inline std::string summary_csv(const UpdatingProblem& problem, const MinimaRegistry& reg,
                               const std::vector<MinimumReport>& reports) {
    const auto& labels = problem.pencil().labels();
    std::ostringstream out;
    out << "index,global,phi";
    for (const auto& l : labels) out << ',' << csv_field("x_" + l);
    for (Index i = 0; i < problem.q(); ++i) out << ",f" << i + 1;
    for (const auto& l : labels) out << ',' << csv_field("zeta_" + l);
    for (const auto& l : labels) out << ',' << csv_field("eta_" + l);
    for (const auto& l : labels) out << ',' << csv_field("class_" + l);
    out << '\n';
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const MinimumRecord& r = *reports[i].record;
        out << i << ',' << (static_cast<Index>(i) == reg.global_index ? 1 : 0) << ',' << format_csv_double(r.phi);
        for (Index j = 0; j < r.x_star.size(); ++j) out << ',' << format_csv_double(r.x_star[j]);
        for (Index k = 0; k < r.freqs.size(); ++k) out << ',' << format_csv_double(r.freqs[k]);
        for (const auto& p : reports[i].reliability.params) out << ',' << format_csv_double(p.zeta);
        for (const auto& p : reports[i].reliability.params) out << ',' << format_csv_double(p.eta);
        for (const auto& p : reports[i].reliability.params) out << ',' << to_string(p.cls);
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------------------------
// Sensitivity reports

inline ordered_json eet_json(const EETReport& rep, const EETDesign& design) {
    ordered_json j;
    j["design"] = {{"r", design.r},
                   {"levels", design.levels},
                   {"delta", design.step()},
                   {"seed", design.seed},
                   {"lower", to_json(design.box.lower)},
                   {"upper", to_json(design.box.upper)}};
    j["parameters"] = rep.labels;
    j["evaluations"] = rep.evaluations;
    j["trajectories"] = rep.trajectories;
    j["dropped"] = rep.dropped;
    j["mu_star"] = to_json(rep.mu_star);
    j["mu"] = to_json(rep.mu);
    j["sigma"] = to_json(rep.sigma);
    return j;
}

/// One row per frequency: mu_star then sigma for every parameter.
inline std::string eet_csv(const EETReport& rep) {
    std::ostringstream out;
    out << "mode";
    for (const auto& l : rep.labels) out << ',' << csv_field("mu_star_" + l);
    for (const auto& l : rep.labels) out << ',' << csv_field("sigma_" + l);
    out << '\n';
    for (Index i = 0; i < rep.mu_star.rows(); ++i) {
        out << i + 1;
        for (Index j = 0; j < rep.mu_star.cols(); ++j) out << ',' << format_csv_double(rep.mu_star(i, j));
        for (Index j = 0; j < rep.sigma.cols(); ++j) out << ',' << format_csv_double(rep.sigma(i, j));
        out << '\n';
    }
    return out.str();
}

/// Long format for plotting: one row per (frequency, parameter).
inline std::string eet_long_csv(const EETReport& rep) {
    std::ostringstream out;
    out << "mode,parameter,mu_star,sigma,mu\n";
    for (Index i = 0; i < rep.mu_star.rows(); ++i)
        for (Index j = 0; j < rep.mu_star.cols(); ++j)
            out << i + 1 << ',' << csv_field(rep.labels[static_cast<std::size_t>(j)]) << ','
                << format_csv_double(rep.mu_star(i, j)) << ',' << format_csv_double(rep.sigma(i, j)) << ','
                << format_csv_double(rep.mu(i, j)) << '\n';
    return out.str();
}

}  // namespace modupdate
