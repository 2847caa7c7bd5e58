#pragma once

// Run configuration: a JSON document describing the model, the parameter box, the measured
// frequencies and the search/sensitivity settings. Validation errors name the offending field.
//
//   {
//     "model": {"type": "chain", "masses": [1, 1], "groups": [[0], [1]], "labels": ["k1", "k2"]},
//     "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
//     "targets": [0.0983, 0.2575],            // or "targets_from": [1, 1] with "modes": 2
//     "weights": "relative",                   // unit | relative | {"mode": "custom", "values": [...]}
//     "epsilon": 1e-3,
//     "search": {"max_depth": 6, "max_local_solves": 10000, "threads": 1},
//     "local": {...}, "solver": {...}, "thresholds": {"small": 0.1, "large": 0.5},
//     "sensitivity": {"r": 10, "levels": 4, "seed": 1},
//     "output": {"dir": "out"}
//   }

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modupdate/matrix_market.hpp"
#include "modupdate/sensitivity.hpp"

namespace modupdate {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct ModelSpec {
    std::string type;  ///< chain | cantilever | manifest
    json source;       ///< the "model" object as written
    fs::path base_dir;
};

struct SensitivityConfig {
    Index r = 10;
    int levels = 4;
    double delta = 0.0;
    std::uint64_t seed = 1;
};

struct RunConfig {
    ModelSpec model;
    std::optional<ParamBox> box;
    std::optional<Vector> targets;
    std::optional<Vector> targets_from;
    Index modes = 0;  ///< number of frequencies; defaults to the target count
    WeightMode weight_mode = WeightMode::Unit;
    Vector custom_weights;
    double epsilon = 1e-3;
    GlobalOptions search;
    Thresholds thresholds;
    std::optional<SensitivityConfig> sensitivity;
    fs::path output_dir = "out";
};

namespace detail {

class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    std::string at(const char* key) const { return path_ + "." + key; }

    const json& object(const char* key) const {
        require(key);
        if (!j_.at(key).is_object()) fail(at(key), "expected an object");
        return j_.at(key);
    }
    double number(const char* key) const {
        require(key);
        return as_number(j_.at(key), at(key));
    }
    double number_or(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }
    long integer(const char* key) const {
        require(key);
        return as_integer(j_.at(key), at(key));
    }
    long integer_or(const char* key, long fallback) const { return has(key) ? integer(key) : fallback; }
    std::string string(const char* key) const {
        require(key);
        if (!j_.at(key).is_string()) fail(at(key), "expected a string");
        return j_.at(key).get<std::string>();
    }
    Vector vector(const char* key) const {
        require(key);
        return as_vector(j_.at(key), at(key));
    }
    std::vector<std::string> strings_or_empty(const char* key) const {
        if (!has(key)) return {};
        const json& a = j_.at(key);
        if (!a.is_array()) fail(at(key), "expected an array of strings");
        std::vector<std::string> out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_string()) fail(at(key) + "[" + std::to_string(i) + "]", "expected a string");
            out.push_back(a[i].get<std::string>());
        }
        return out;
    }

    [[noreturn]] static void fail(const std::string& where, const std::string& what) {
        throw ConfigError(where + ": " + what);
    }
    static double as_number(const json& v, const std::string& where) {
        if (!v.is_number()) fail(where, "expected a number");
        return v.get<double>();
    }
    static long as_integer(const json& v, const std::string& where) {
        if (v.is_number_integer()) return v.get<long>();
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (d == std::floor(d) && std::abs(d) < 9e15) return static_cast<long>(d);
        }
        fail(where, "expected an integer");
    }
    static Vector as_vector(const json& v, const std::string& where) {
        if (!v.is_array() || v.empty()) fail(where, "expected a non-empty array of numbers");
        Vector out(static_cast<Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i)
            out[static_cast<Index>(i)] = as_number(v[i], where + "[" + std::to_string(i) + "]");
        return out;
    }

private:
    void require(const char* key) const {
        if (!has(key)) fail(at(key), "missing");
    }
    const json& j_;
    std::string path_;
};

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok |= it.key() == k;
        if (!ok) Fields::fail(path + "." + it.key(), "unknown field");
    }
}

}  // namespace detail

inline json parse_json_text(const std::string& text, const std::string& name) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(name + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

inline RunConfig parse_config(const json& root, const fs::path& base_dir = ".") {
    using detail::Fields;
    if (!root.is_object()) Fields::fail("config", "expected a JSON object");
    detail::reject_unknown(root, "config", {"model", "box", "targets", "targets_from", "modes", "weights", "epsilon",
                                            "search", "local", "solver", "thresholds", "sensitivity", "output"});
    const Fields f(root, "config");
    RunConfig c;

    const json& model = f.object("model");
    c.model.source = model;
    c.model.base_dir = base_dir;
    c.model.type = Fields(model, "config.model").string("type");
    if (c.model.type != "chain" && c.model.type != "cantilever" && c.model.type != "manifest")
        Fields::fail("config.model.type", "expected chain, cantilever or manifest");

    if (f.has("box")) {
        const json& b = f.object("box");
        detail::reject_unknown(b, "config.box", {"lower", "upper"});
        const Fields bf(b, "config.box");
        const Vector lo = bf.vector("lower"), hi = bf.vector("upper");
        if (lo.size() != hi.size()) Fields::fail("config.box.upper", "length differs from config.box.lower");
        try {
            c.box = ParamBox(lo, hi);
        } catch (const InvalidArgument& e) {
            Fields::fail("config.box", e.what());
        }
    }
    if (f.has("targets") && f.has("targets_from"))
        Fields::fail("config.targets_from", "give either targets or targets_from, not both");
    if (f.has("targets")) c.targets = f.vector("targets");
    if (f.has("targets_from")) c.targets_from = f.vector("targets_from");
    c.modes = f.integer_or("modes", 0);
    if (c.modes < 0) Fields::fail("config.modes", "must be positive");
    if (c.targets && c.modes != 0 && c.modes != c.targets->size())
        Fields::fail("config.modes", "disagrees with the number of targets");
    if (c.targets) c.modes = c.targets->size();

    if (f.has("weights")) {
        const json& w = root.at("weights");
        std::string mode;
        if (w.is_string()) mode = w.get<std::string>();
        else if (w.is_object()) {
            detail::reject_unknown(w, "config.weights", {"mode", "values"});
            mode = Fields(w, "config.weights").string("mode");
        } else Fields::fail("config.weights", "expected a string or an object");
        if (mode == "unit") c.weight_mode = WeightMode::Unit;
        else if (mode == "relative") c.weight_mode = WeightMode::Relative;
        else if (mode == "custom") {
            c.weight_mode = WeightMode::Custom;
            if (!w.is_object()) Fields::fail("config.weights.values", "missing");
            c.custom_weights = Fields(w, "config.weights").vector("values");
        } else Fields::fail(w.is_object() ? "config.weights.mode" : "config.weights", "expected unit, relative or custom");
    }

    c.epsilon = f.number_or("epsilon", c.epsilon);
    if (!(c.epsilon > 0.0)) Fields::fail("config.epsilon", "must be positive");

    if (f.has("search")) {
        const json& s = f.object("search");
        detail::reject_unknown(s, "config.search", {"max_depth", "max_local_solves", "threads"});
        const Fields sf(s, "config.search");
        c.search.max_depth = static_cast<int>(sf.integer_or("max_depth", c.search.max_depth));
        c.search.max_local_solves = sf.integer_or("max_local_solves", c.search.max_local_solves);
        const long threads = sf.integer_or("threads", c.search.threads);
        if (c.search.max_depth < 0) Fields::fail("config.search.max_depth", "must be nonnegative");
        if (c.search.max_local_solves < 1) Fields::fail("config.search.max_local_solves", "must be positive");
        if (threads < 0) Fields::fail("config.search.threads", "must be nonnegative");
        c.search.threads = static_cast<unsigned>(threads);
    }
    if (f.has("local")) {
        const json& l = f.object("local");
        detail::reject_unknown(l, "config.local", {"gradient_tol", "step_tol", "max_iterations", "initial_radius",
                                                   "inner_iterations", "surrogate_size"});
        const Fields lf(l, "config.local");
        LocalOptions& o = c.search.local;
        o.gradient_tol = lf.number_or("gradient_tol", o.gradient_tol);
        o.step_tol = lf.number_or("step_tol", o.step_tol);
        o.max_iterations = static_cast<int>(lf.integer_or("max_iterations", o.max_iterations));
        o.initial_radius = lf.number_or("initial_radius", o.initial_radius);
        o.inner_iterations = static_cast<int>(lf.integer_or("inner_iterations", o.inner_iterations));
        o.surrogate_size = lf.integer_or("surrogate_size", o.surrogate_size);
        if (!(o.initial_radius > 0.0)) Fields::fail("config.local.initial_radius", "must be positive");
        if (o.max_iterations < 1) Fields::fail("config.local.max_iterations", "must be positive");
    }
    if (f.has("solver")) {
        const json& s = f.object("solver");
        detail::reject_unknown(s, "config.solver", {"tol", "max_restarts", "subspace", "seed", "cross_check"});
        const Fields sf(s, "config.solver");
        SolverOptions& o = c.search.local.solver;
        o.tol = sf.number_or("tol", o.tol);
        o.max_restarts = static_cast<int>(sf.integer_or("max_restarts", o.max_restarts));
        o.subspace = sf.integer_or("subspace", o.subspace);
        o.seed = static_cast<std::uint64_t>(sf.integer_or("seed", static_cast<long>(o.seed)));
        if (sf.has("cross_check")) {
            if (!s.at("cross_check").is_boolean()) Fields::fail("config.solver.cross_check", "expected a boolean");
            o.cross_check = s.at("cross_check").get<bool>();
        }
        if (!(o.tol > 0.0)) Fields::fail("config.solver.tol", "must be positive");
    }
    if (f.has("thresholds")) {
        const json& t = f.object("thresholds");
        detail::reject_unknown(t, "config.thresholds", {"small", "large"});
        const Fields tf(t, "config.thresholds");
        c.thresholds.small = tf.number_or("small", c.thresholds.small);
        c.thresholds.large = tf.number_or("large", c.thresholds.large);
    }
    if (f.has("sensitivity")) {
        const json& s = f.object("sensitivity");
        detail::reject_unknown(s, "config.sensitivity", {"r", "levels", "delta", "seed"});
        const Fields sf(s, "config.sensitivity");
        SensitivityConfig sc;
        sc.r = sf.integer_or("r", sc.r);
        sc.levels = static_cast<int>(sf.integer_or("levels", sc.levels));
        sc.delta = sf.number_or("delta", sc.delta);
        sc.seed = static_cast<std::uint64_t>(sf.integer_or("seed", static_cast<long>(sc.seed)));
        if (sc.r < 1) Fields::fail("config.sensitivity.r", "must be at least 1");
        if (sc.levels < 2) Fields::fail("config.sensitivity.levels", "must be at least 2");
        if (sc.delta < 0.0 || sc.delta >= 1.0) Fields::fail("config.sensitivity.delta", "must lie in (0, 1)");
        c.sensitivity = sc;
    }
    if (f.has("output")) {
        const json& o = f.object("output");
        detail::reject_unknown(o, "config.output", {"dir"});
        c.output_dir = Fields(o, "config.output").string("dir");
        if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
    } else {
        c.output_dir = base_dir / "out";
    }
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(parse_json_text(ss.str(), path.string()), path.parent_path().empty() ? "." : path.parent_path());
}

// ---------------------------------------------------------------------------------------------
// Building the model and the problem

namespace detail {

inline std::vector<std::vector<Index>> index_groups(const json& g, const std::string& where) {
    if (!g.is_array()) Fields::fail(where, "expected an array of index arrays");
    std::vector<std::vector<Index>> out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const std::string w = where + "[" + std::to_string(i) + "]";
        if (!g[i].is_array()) Fields::fail(w, "expected an array of spring indices");
        std::vector<Index> grp;
        for (std::size_t k = 0; k < g[i].size(); ++k)
            grp.push_back(Fields::as_integer(g[i][k], w + "[" + std::to_string(k) + "]"));
        out.push_back(std::move(grp));
    }
    return out;
}

}  // namespace detail

inline AffinePencil build_model(const ModelSpec& spec) {
    using detail::Fields;
    const json& m = spec.source;
    const Fields f(m, "config.model");
    try {
        if (spec.type == "chain") {
            detail::reject_unknown(m, "config.model", {"type", "masses", "groups", "labels"});
            const Vector masses = f.vector("masses");
            const std::vector<double> mv(masses.data(), masses.data() + masses.size());
            if (!m.contains("groups")) Fields::fail("config.model.groups", "missing");
            const auto groups = detail::index_groups(m.at("groups"), "config.model.groups");
            return build_spring_chain(masses.size(), mv, groups, f.strings_or_empty("labels"));
        }
        if (spec.type == "cantilever") {
            detail::reject_unknown(m, "config.model", {"type", "dof_per_node", "segments", "labels"});
            const int dpn = static_cast<int>(f.integer_or("dof_per_node", 2));
            if (!m.contains("segments") || !m.at("segments").is_array())
                Fields::fail("config.model.segments", "expected an array of segments");
            std::vector<BeamSegment> segs;
            const json& arr = m.at("segments");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const std::string w = "config.model.segments[" + std::to_string(i) + "]";
                if (!arr[i].is_object()) Fields::fail(w, "expected an object");
                detail::reject_unknown(arr[i], w, {"length", "stiffness_param", "density_param", "second_moment",
                                                   "area", "elements"});
                const Fields sf(arr[i], w);
                BeamSegment s;
                s.length = sf.number("length");
                s.stiffness_param = sf.integer("stiffness_param");
                s.density_param = sf.integer("density_param");
                s.second_moment = sf.number_or("second_moment", s.second_moment);
                s.area = sf.number_or("area", s.area);
                s.elements = static_cast<int>(sf.integer_or("elements", s.elements));
                segs.push_back(s);
            }
            return build_cantilever_beam(segs, dpn, f.strings_or_empty("labels"));
        }
        detail::reject_unknown(m, "config.model", {"type", "path"});
        fs::path p = f.string("path");
        if (p.is_relative()) p = spec.base_dir / p;
        return load_pencil(p);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config.model: ") + e.what());
    }
}

/// Number of frequencies requested by the configuration.
inline Index config_modes(const RunConfig& c) {
    if (c.targets) return c.targets->size();
    if (c.modes > 0) return c.modes;
    throw ConfigError("config.modes: missing (needed when no targets are given)");
}

inline Vector resolve_targets(const RunConfig& c, const AffinePencil& pencil) {
    if (c.targets) return *c.targets;
    if (c.targets_from) {
        if (c.targets_from->size() != pencil.params())
            throw ConfigError("config.targets_from: expected " + std::to_string(pencil.params()) + " values");
        return solve_modes(pencil, *c.targets_from, config_modes(c), c.search.local.solver).freqs;
    }
    throw ConfigError("config.targets: missing");
}

inline UpdatingProblem build_problem(const RunConfig& c, const AffinePencil& pencil) {
    if (!c.box) throw ConfigError("config.box: missing");
    if (c.box->size() != pencil.params())
        throw ConfigError("config.box: has " + std::to_string(c.box->size()) + " parameters, model has " +
                          std::to_string(pencil.params()));
    const Vector targets = resolve_targets(c, pencil);
    ParamBox box = *c.box;
    box.labels = pencil.labels();
    Vector w;
    try {
        w = make_weights(c.weight_mode, targets, c.custom_weights);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config.weights: ") + e.what());
    }
    try {
        return UpdatingProblem(pencil, box, targets, w, c.epsilon);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

/// The effective configuration with every default written out.
inline ordered_json effective_config(const RunConfig& c) {
    ordered_json j;
    j["model"] = c.model.source;
    if (c.box) j["box"] = {{"lower", std::vector<double>(c.box->lower.begin(), c.box->lower.end())},
                           {"upper", std::vector<double>(c.box->upper.begin(), c.box->upper.end())}};
    if (c.targets) j["targets"] = std::vector<double>(c.targets->begin(), c.targets->end());
    if (c.targets_from) j["targets_from"] = std::vector<double>(c.targets_from->begin(), c.targets_from->end());
    j["modes"] = c.modes;
    j["weights"] = c.weight_mode == WeightMode::Unit       ? ordered_json("unit")
                   : c.weight_mode == WeightMode::Relative ? ordered_json("relative")
                                                           : ordered_json{{"mode", "custom"},
                                                                          {"values", std::vector<double>(c.custom_weights.begin(),
                                                                                                         c.custom_weights.end())}};
    j["epsilon"] = c.epsilon;
    j["search"] = {{"max_depth", c.search.max_depth},
                   {"max_local_solves", c.search.max_local_solves},
                   {"threads", c.search.threads}};
    const LocalOptions& l = c.search.local;
    j["local"] = {{"gradient_tol", l.gradient_tol},     {"step_tol", l.step_tol},
                  {"max_iterations", l.max_iterations}, {"initial_radius", l.initial_radius},
                  {"inner_iterations", l.inner_iterations}, {"surrogate_size", l.surrogate_size}};
    const SolverOptions& s = l.solver;
    j["solver"] = {{"tol", s.tol}, {"max_restarts", s.max_restarts}, {"subspace", s.subspace},
                   {"seed", s.seed}, {"cross_check", s.cross_check}};
    j["thresholds"] = {{"small", c.thresholds.small}, {"large", c.thresholds.large}};
    if (c.sensitivity)
        j["sensitivity"] = {{"r", c.sensitivity->r},
                            {"levels", c.sensitivity->levels},
                            {"delta", c.sensitivity->delta},
                            {"seed", c.sensitivity->seed}};
    j["output"] = {{"dir", c.output_dir.string()}};
    return j;
}

}  // namespace modupdate
