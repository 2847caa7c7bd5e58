#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "modupdate/run.hpp"

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
    auto logger = spdlog::stderr_color_mt("modupdate");
    logger->set_pattern("[%l] %v");
    spdlog::level::level_enum level = spdlog::level::info;
    if (const char* env = std::getenv("MODUPDATE_LOG")) {
        level = spdlog::level::from_str(env);
        if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::info;
    }
    logger->set_level(level);
    return logger;
}

modupdate::LogSink sink_for(const std::shared_ptr<spdlog::logger>& logger) {
    return [logger](modupdate::LogLevel level, const std::string& msg) {
        switch (level) {
            case modupdate::LogLevel::Debug: logger->debug(msg); break;
            case modupdate::LogLevel::Info: logger->info(msg); break;
            case modupdate::LogLevel::Warn: logger->warn(msg); break;
            case modupdate::LogLevel::Error: logger->error(msg); break;
        }
    };
}

modupdate::Vector parse_point(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw modupdate::ConfigError("--at: '" + item + "' is not a number");
        }
        if (used != item.size()) throw modupdate::ConfigError("--at: '" + item + "' is not a number");
        values.push_back(v);
    }
    if (values.empty()) throw modupdate::ConfigError("--at: no values given");
    return Eigen::Map<modupdate::Vector>(values.data(), static_cast<modupdate::Index>(values.size()));
}

void add_overrides(CLI::App* cmd, std::string& out, int& depth, double& eps, std::uint64_t& seed,
                   unsigned& threads) {
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--max-depth", depth, "Maximum subdivision depth");
    cmd->add_option("--epsilon", eps, "Pseudominimum tolerance (scaled units)");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--threads", threads, "Worker threads (0: all cores)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Finite-element model updating from natural frequencies"};
    app.require_subcommand(1);

    std::string config, out, at;
    int depth = 0;
    double eps = 0.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    modupdate::Overrides overrides;

    auto* update = app.add_subcommand("update", "Find all minima of the frequency discrepancy and report diagnostics");
    update->add_option("config", config, "Configuration file")->required()->check(CLI::ExistingFile);
    add_overrides(update, out, depth, eps, seed, threads);

    auto* sens = app.add_subcommand("sensitivity", "Elementary-effects screening of the frequencies");
    sens->add_option("config", config, "Configuration file")->required()->check(CLI::ExistingFile);
    add_overrides(sens, out, depth, eps, seed, threads);

    auto* solve = app.add_subcommand("solve", "One modal solve at a parameter point");
    solve->add_option("config", config, "Configuration file")->required()->check(CLI::ExistingFile);
    solve->add_option("--at", at, "Comma-separated parameter values")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : modupdate::kConfigError;
    }

    auto* active = app.get_subcommands().front();
    if (active != solve) {
        if (active->count("--out")) overrides.out = out;
        if (active->count("--max-depth")) overrides.max_depth = depth;
        if (active->count("--epsilon")) overrides.epsilon = eps;
        if (active->count("--seed")) overrides.seed = seed;
        if (active->count("--threads")) overrides.threads = threads;
    }

    const auto logger = make_logger();
    const auto sink = sink_for(logger);
    if (*update) return modupdate::run_update(config, overrides, sink);
    if (*sens) return modupdate::run_sensitivity(config, overrides, sink);
    try {
        return modupdate::run_solve(config, parse_point(at), std::cout, sink);
    } catch (const modupdate::ConfigError& e) {
        logger->error(e.what());
        return modupdate::kConfigError;
    }
}
