#pragma once

// Command drivers: load a configuration, run the requested analysis and write the reports.
// Each returns a process exit status.

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "modupdate/report.hpp"

namespace modupdate {

enum ExitCode : int { kOk = 0, kInternalError = 1, kConfigError = 2, kInfeasible = 3, kNoConvergence = 4 };

enum class LogLevel { Debug, Info, Warn, Error };
using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Command-line settings that take precedence over the configuration file.
struct Overrides {
    std::optional<fs::path> out;
    std::optional<int> max_depth;
    std::optional<double> epsilon;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

inline void apply(RunConfig& c, const Overrides& o) {
    if (o.out) c.output_dir = *o.out;
    if (o.max_depth) {
        if (*o.max_depth < 0) throw ConfigError("--max-depth: must be nonnegative");
        c.search.max_depth = *o.max_depth;
    }
    if (o.epsilon) {
        if (!(*o.epsilon > 0.0)) throw ConfigError("--epsilon: must be positive");
        c.epsilon = *o.epsilon;
    }
    if (o.seed) {
        c.search.local.solver.seed = *o.seed;
        if (c.sensitivity) c.sensitivity->seed = *o.seed;
    }
    if (o.threads) c.search.threads = *o.threads;
}

namespace detail {

inline void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

inline void emit(const LogSink& log, LogLevel level, const std::string& msg) {
    if (log) log(level, msg);
}

/// Runs `body`, mapping library errors onto exit codes.
inline int guarded(const LogSink& log, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        emit(log, LogLevel::Error, std::string("configuration error: ") + e.what());
        return kConfigError;
    } catch (const IoError& e) {
        emit(log, LogLevel::Error, std::string("input error: ") + e.what());
        return kConfigError;
    } catch (const InfeasibleError& e) {
        emit(log, LogLevel::Error, std::string("infeasible problem: ") + e.what());
        return kInfeasible;
    } catch (const ConvergenceError& e) {
        emit(log, LogLevel::Error, std::string("no convergence: ") + e.what());
        return kNoConvergence;
    } catch (const InvalidArgument& e) {
        emit(log, LogLevel::Error, std::string("configuration error: ") + e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        emit(log, LogLevel::Error, std::string("internal error: ") + e.what());
        return kInternalError;
    }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline int run_update(const fs::path& config_path, const Overrides& overrides = {}, const LogSink& log = {}) {
    return detail::guarded(log, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        RunConfig cfg = load_config(config_path);
        apply(cfg, overrides);
        const AffinePencil pencil = build_model(cfg.model);
        const UpdatingProblem problem = build_problem(cfg, pencil);
        detail::emit(log, LogLevel::Info,
                     "model: " + std::to_string(pencil.dofs()) + " dofs, " + std::to_string(pencil.params()) +
                         " parameters, " + std::to_string(problem.q()) + " target frequencies");

        const MinimaRegistry reg = solve_global(problem, cfg.search);
        const double elapsed = detail::seconds_since(t0);
        const auto reports = analyse(problem, reg, cfg.thresholds);

        fs::create_directories(cfg.output_dir);
        detail::write_file(cfg.output_dir / "minima.json", to_json_text(minima_json(problem, reg, reports)));
        detail::write_file(cfg.output_dir / "summary.csv", summary_csv(problem, reg, reports));

        std::ostringstream lg;
        lg << "command: update\n";
        lg << "config: " << config_path.string() << '\n';
        lg << "effective configuration:\n" << to_json_text(effective_config(cfg));
        lg << "local solves: " << reg.local_solves << '\n';
        lg << "number of evaluations: " << reg.evaluations << '\n';
        lg << "minima: " << reg.size() << '\n';
        lg << "global minimum: " << reg.global_index << " (phi " << format_double(reg.global().phi) << ")\n";
        lg << "boundary rejects: " << reg.boundary_rejects << '\n';
        lg << "max depth reached: " << reg.max_depth_reached << (reg.budget_exhausted ? " (budget exhausted)" : "")
           << '\n';
        for (const auto& f : reg.failures)
            lg << "failed subproblem at depth " << f.depth << ": " << f.reason << '\n';
        lg << "computation time: " << elapsed << " s\n";
        detail::write_file(cfg.output_dir / "run.log", lg.str());

        detail::emit(log, LogLevel::Info,
                     std::to_string(reg.size()) + " minima, " + std::to_string(reg.evaluations) +
                         " evaluations; reports in " + cfg.output_dir.string());
        for (const auto& f : reg.failures) detail::emit(log, LogLevel::Warn, "failed subproblem: " + f.reason);
        return int{kOk};
    });
}

inline int run_sensitivity(const fs::path& config_path, const Overrides& overrides = {}, const LogSink& log = {}) {
    return detail::guarded(log, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        RunConfig cfg = load_config(config_path);
        apply(cfg, overrides);
        if (!cfg.sensitivity) throw ConfigError("config.sensitivity: missing");
        if (!cfg.box) throw ConfigError("config.box: missing");
        const AffinePencil pencil = build_model(cfg.model);
        if (cfg.box->size() != pencil.params())
            throw ConfigError("config.box: has " + std::to_string(cfg.box->size()) + " parameters, model has " +
                              std::to_string(pencil.params()));
        const Index q = config_modes(cfg);
        pencil.validate_on(*cfg.box);

        EETDesign design;
        design.box = ParamBox(cfg.box->lower, cfg.box->upper, pencil.labels());
        design.r = cfg.sensitivity->r;
        design.levels = cfg.sensitivity->levels;
        design.delta = cfg.sensitivity->delta;
        design.seed = cfg.sensitivity->seed;
        design.threads = cfg.search.threads;
        EETReport rep;
        try {
            rep = elementary_effects(pencil, q, design, cfg.search.local.solver);
        } catch (const InvalidArgument&) {
            throw;
        } catch (const Error& e) {
            throw InfeasibleError(e.what());
        }

        fs::create_directories(cfg.output_dir);
        detail::write_file(cfg.output_dir / "eet.json", to_json_text(eet_json(rep, design)));
        detail::write_file(cfg.output_dir / "eet.csv", eet_csv(rep));
        detail::write_file(cfg.output_dir / "eet_long.csv", eet_long_csv(rep));

        std::ostringstream lg;
        lg << "command: sensitivity\n";
        lg << "config: " << config_path.string() << '\n';
        lg << "effective configuration:\n" << to_json_text(effective_config(cfg));
        lg << "number of evaluations: " << rep.evaluations << '\n';
        lg << "trajectories: " << rep.trajectories << " (dropped " << rep.dropped << ")\n";
        lg << "computation time: " << detail::seconds_since(t0) << " s\n";
        detail::write_file(cfg.output_dir / "run.log", lg.str());
        detail::emit(log, LogLevel::Info,
                     std::to_string(rep.evaluations) + " evaluations; reports in " + cfg.output_dir.string());
        return int{kOk};
    });
}

/// One modal solve at `x`; prints "mode,frequency_hz,eigenvalue" rows.
inline int run_solve(const fs::path& config_path, const Vector& x, std::ostream& out, const LogSink& log = {}) {
    return detail::guarded(log, [&] {
        const RunConfig cfg = load_config(config_path);
        const AffinePencil pencil = build_model(cfg.model);
        if (x.size() != pencil.params())
            throw ConfigError("--at: expected " + std::to_string(pencil.params()) + " values, got " +
                              std::to_string(x.size()));
        const Index q = config_modes(cfg);
        const ModalSolution sol = solve_modes(pencil, x, q, cfg.search.local.solver);
        out << "mode,frequency_hz,eigenvalue\n";
        for (Index i = 0; i < sol.q(); ++i)
            out << i + 1 << ',' << format_double(sol.freqs[i]) << ',' << format_double(sol.lambdas[i]) << '\n';
        return int{kOk};
    });
}

}  // namespace modupdate
