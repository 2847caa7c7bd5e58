#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "modupdate/run.hpp"
#include "oracles.hpp"

using namespace modupdate;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("modupdate_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_text(const fs::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
    return path;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kChain = R"({
  "model": {"type": "chain", "masses": [1, 1], "groups": [[0], [1]], "labels": ["k1", "k2"]},
  "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
  "targets_from": [1, 1],
  "modes": 2,
  "weights": "relative",
  "sensitivity": {"r": 6, "levels": 4, "seed": 3}
})";

const char* kChain3 = R"({
  "model": {"type": "chain", "masses": [1, 2, 1], "groups": [[0, 1], [2]], "labels": ["base", "top"]},
  "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
  "targets_from": [1.3, 0.6],
  "modes": 3,
  "sensitivity": {"r": 8}
})";

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

RunConfig config_from(const std::string& text) { return parse_config(parse_json_text(text, "test")); }

int exit_status(const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

TEST(Config, RelativeWeightsAreInverseTargetsAtUnitNorm) {
    const RunConfig c = config_from(R"({
      "model": {"type": "chain", "masses": [1, 1], "groups": [[0], [1]]},
      "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
      "targets": [2, 4], "weights": "relative"})");
    const AffinePencil pencil = build_model(c.model);
    const UpdatingProblem prob = build_problem(c, pencil);
    EXPECT_NEAR(prob.weights()[0], 2.0 / std::sqrt(5.0), 1e-15);
    EXPECT_NEAR(prob.weights()[1], 1.0 / std::sqrt(5.0), 1e-15);
}

TEST(Config, CustomWeightsAndDefaults) {
    const RunConfig c = config_from(R"({
      "model": {"type": "chain", "masses": [1, 1], "groups": [[0], [1]]},
      "box": {"lower": [0.25, 0.25], "upper": [4, 4]},
      "targets": [0.1, 0.3], "weights": {"mode": "custom", "values": [3, 4]}})");
    const UpdatingProblem prob = build_problem(c, build_model(c.model));
    EXPECT_NEAR(prob.weights()[0], 0.6, 1e-15);
    EXPECT_NEAR(prob.weights()[1], 0.8, 1e-15);
    EXPECT_EQ(c.search.max_depth, 6);
    EXPECT_EQ(c.search.max_local_solves, 10000);
    EXPECT_DOUBLE_EQ(c.epsilon, 1e-3);
    EXPECT_FALSE(c.sensitivity.has_value());
}

TEST(Config, TargetsFromSolveTheModel) {
    const RunConfig c = config_from(kChain);
    const AffinePencil pencil = build_model(c.model);
    const Vector f = resolve_targets(c, pencil);
    EXPECT_LE((f - oracle::dense_freqs(pencil, Vector::Ones(2), 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Config, MalformedJsonNamesTheByteOffset) {
    const std::string msg = message_of([] { parse_json_text(R"({"model": {"type": "chain",, }})", "cfg.json"); });
    EXPECT_NE(msg.find("cfg.json"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte 28"), std::string::npos) << msg;
    EXPECT_THROW(parse_json_text("[1, 2", "x"), ConfigError);
}

TEST(Config, ErrorsNameTheField) {
    auto msg = [](const std::string& text) {
        return message_of([&] {
            const RunConfig c = config_from(text);
            build_problem(c, build_model(c.model));
        });
    };
    const std::string model = R"("model": {"type": "chain", "masses": [1, 1], "groups": [[0], [1]]})";
    EXPECT_NE(msg("{" + model + R"(, "box": {"lower": [0.25, "a"], "upper": [4, 4]}, "targets": [1, 2]})")
                  .find("config.box.lower[1]"),
              std::string::npos);
    EXPECT_NE(msg("{" + model + R"(, "box": {"lower": [1, 1], "upper": [4, 4]}, "targets": [1, 2], "colour": 1})")
                  .find("config.colour"),
              std::string::npos);
    EXPECT_NE(msg("{" + model + R"(, "box": {"lower": [1, 1], "upper": [4, 4]}, "targets": [1, 2],
                  "search": {"max_depth": -1}})")
                  .find("config.search.max_depth"),
              std::string::npos);
    EXPECT_NE(msg(R"({"model": {"type": "truss"}})").find("config.model.type"), std::string::npos);
    EXPECT_NE(msg("{" + model + R"(, "box": {"lower": [1, 1], "upper": [4, 4]}})").find("config.targets"),
              std::string::npos);
    EXPECT_NE(msg("{" + model + R"(, "box": {"lower": [1, 1], "upper": [4, 4]}, "targets": [1, 2],
                  "weights": "loud"})")
                  .find("config.weights"),
              std::string::npos);
}

TEST(Run, MissingConfigAndMissingSensitivityBlockExitWithTwo) {
    const fs::path dir = scratch("missing");
    EXPECT_EQ(run_update(dir / "absent.json"), kConfigError);
    const fs::path cfg = write_text(dir / "c.json", R"({
      "model": {"type": "chain", "masses": [1, 1], "groups": [[0], [1]]},
      "box": {"lower": [0.25, 0.25], "upper": [4, 4]}, "targets": [0.1, 0.3]})");
    std::vector<std::string> errors;
    const LogSink sink = [&](LogLevel level, const std::string& m) {
        if (level == LogLevel::Error) errors.push_back(m);
    };
    EXPECT_EQ(run_sensitivity(cfg, {}, sink), kConfigError);
    ASSERT_EQ(errors.size(), 1u);
    EXPECT_NE(errors[0].find("config.sensitivity"), std::string::npos);
    EXPECT_EQ(run_update(write_text(dir / "bad.json", "{\"model\": "), {}, sink), kConfigError);
}

TEST(Run, UpdateWritesReportsThatAgree) {
    const fs::path dir = scratch("update");
    const fs::path cfg = write_text(dir / "chain.json", kChain3);
    Overrides o;
    o.out = dir / "out";
    ASSERT_EQ(run_update(cfg, o), kOk);
    const auto minima = nlohmann::json::parse(read_text(dir / "out" / "minima.json"));
    const std::string summary = read_text(dir / "out" / "summary.csv");
    const std::string log = read_text(dir / "out" / "run.log");
    EXPECT_NE(log.find("number of evaluations"), std::string::npos);
    EXPECT_NE(log.find("computation time"), std::string::npos);
    EXPECT_NE(log.find("\"max_depth\": 6"), std::string::npos);

    std::stringstream ss(summary);
    std::string line;
    std::getline(ss, line);
    const auto header = split(line);
    ASSERT_EQ(header[0], "index");
    ASSERT_EQ(header[3], "x_base");
    const auto& list = minima.at("minima");
    ASSERT_GE(list.size(), 1u);
    std::size_t rows = 0;
    while (std::getline(ss, line)) {
        const auto cells = split(line);
        const auto& m = list.at(rows);
        EXPECT_EQ(cells[1], rows == minima.at("global_index").get<std::size_t>() ? "1" : "0");
        EXPECT_EQ(cells[2], format_double(m.at("phi").get<double>()));
        for (std::size_t j = 0; j < 2; ++j) {
            EXPECT_EQ(cells[3 + j], format_double(m.at("x")[j].get<double>()));
            EXPECT_EQ(cells[8 + j], format_double(m.at("parameters")[j].at("zeta").get<double>()));
            EXPECT_EQ(cells[10 + j], format_double(m.at("parameters")[j].at("eta").get<double>()));
            EXPECT_EQ(cells[12 + j], m.at("parameters")[j].at("class").get<std::string>());
        }
        for (std::size_t k = 0; k < 3; ++k)
            EXPECT_EQ(cells[5 + k], format_double(m.at("frequencies")[k].get<double>()));
        ++rows;
    }
    EXPECT_EQ(rows, list.size());

    const auto& g = list.at(minima.at("global_index").get<std::size_t>());
    EXPECT_NEAR(g.at("x")[0].get<double>(), 1.3, 1e-6);
    EXPECT_NEAR(g.at("x")[1].get<double>(), 0.6, 1e-6);
    for (const auto& p : g.at("parameters"))
        EXPECT_LE(p.at("eta").get<double>(), p.at("zeta").get<double>() * (1.0 + 1e-12));
}

TEST(Run, IdenticalRunsGiveIdenticalBytes) {
    const fs::path dir = scratch("determinism");
    const fs::path cfg = write_text(dir / "chain.json", kChain3);
    const std::vector<std::string> files{"minima.json", "summary.csv", "eet.json", "eet.csv", "eet_long.csv"};
    for (const char* run : {"a", "b", "c"}) {
        Overrides o;
        o.out = dir / run;
        if (std::string(run) == "c") o.threads = 3;
        ASSERT_EQ(run_update(cfg, o), kOk);
        ASSERT_EQ(run_sensitivity(cfg, o), kOk);
    }
    for (const auto& f : files) {
        const std::string a = read_text(dir / "a" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, read_text(dir / "b" / f)) << f;
        EXPECT_EQ(a, read_text(dir / "c" / f)) << f;
    }
    Overrides reseeded;
    reseeded.out = dir / "d";
    reseeded.seed = 99;
    ASSERT_EQ(run_sensitivity(cfg, reseeded), kOk);
    EXPECT_NE(read_text(dir / "a" / "eet.json"), read_text(dir / "d" / "eet.json"));
}

TEST(Run, OverridesTakePrecedence) {
    const fs::path dir = scratch("overrides");
    const fs::path cfg = write_text(dir / "chain.json", kChain3);
    Overrides o;
    o.out = dir / "shallow";
    o.max_depth = 0;
    o.epsilon = 0.05;
    ASSERT_EQ(run_update(cfg, o), kOk);
    const auto minima = nlohmann::json::parse(read_text(dir / "shallow" / "minima.json"));
    EXPECT_EQ(minima.at("search").at("local_solves").get<long>(), 1);
    EXPECT_EQ(minima.at("problem").at("epsilon").get<double>(), 0.05);
    o.epsilon = -1.0;
    EXPECT_EQ(run_update(cfg, o), kConfigError);
}

TEST(Run, SensitivityReportsAreConsistent) {
    const fs::path dir = scratch("sensitivity");
    const fs::path cfg = write_text(dir / "chain.json", kChain);
    Overrides o;
    o.out = dir / "out";
    ASSERT_EQ(run_sensitivity(cfg, o), kOk);
    const auto eet = nlohmann::json::parse(read_text(dir / "out" / "eet.json"));
    EXPECT_EQ(eet.at("evaluations").get<long>(), 6 * 3);
    EXPECT_EQ(eet.at("design").at("seed").get<long>(), 3);
    std::stringstream ss(read_text(dir / "out" / "eet_long.csv"));
    std::string line;
    std::getline(ss, line);
    EXPECT_EQ(line, "mode,parameter,mu_star,sigma,mu");
    int rows = 0;
    while (std::getline(ss, line)) {
        const auto cells = split(line);
        const int mode = std::stoi(cells[0]) - 1;
        const int param = cells[1] == "k1" ? 0 : 1;
        EXPECT_EQ(cells[2], format_double(eet.at("mu_star")[static_cast<std::size_t>(mode)][static_cast<std::size_t>(param)]
                                              .get<double>()));
        ++rows;
    }
    EXPECT_EQ(rows, 4);
}

TEST(Run, SolvePrintsFrequencies) {
    const fs::path dir = scratch("solve");
    const fs::path cfg = write_text(dir / "chain.json", kChain);
    std::ostringstream out;
    Vector x(2);
    x << 2.0, 0.5;
    ASSERT_EQ(run_solve(cfg, x, out), kOk);
    std::stringstream ss(out.str());
    std::string line;
    std::getline(ss, line);
    EXPECT_EQ(line, "mode,frequency_hz,eigenvalue");
    const Vector f = oracle::dense_freqs(build_spring_chain(2, std::vector<double>{1.0, 1.0}, {{0}, {1}}),
                                         Vector::Ones(2), 2);
    for (Index i = 0; i < 2; ++i) {
        ASSERT_TRUE(std::getline(ss, line));
        const auto cells = split(line);
        EXPECT_EQ(cells[0], std::to_string(i + 1));
        EXPECT_NEAR(std::stod(cells[1]), f[i], 1e-12);
    }
    Vector wrong(3);
    wrong << 1.0, 1.0, 1.0;
    EXPECT_EQ(run_solve(cfg, wrong, out), kConfigError);
}

TEST(Run, ManifestModelMatchesBuilder) {
    const fs::path dir = scratch("manifest");
    const AffinePencil chain = build_spring_chain(3, std::vector<double>{1.0, 2.0, 1.0}, {{0, 1}, {2}}, {"base", "top"});
    const fs::path manifest = save_pencil(chain, dir / "pencil");
    std::string text = kChain3;
    const std::string builder = R"({"type": "chain", "masses": [1, 2, 1], "groups": [[0, 1], [2]], "labels": ["base", "top"]})";
    text.replace(text.find(builder), builder.size(),
                 R"({"type": "manifest", "path": ")" + fs::relative(manifest, dir).string() + "\"}");
    const fs::path a = write_text(dir / "builder.json", kChain3);
    const fs::path b = write_text(dir / "manifest.json", text);
    Overrides oa, ob;
    oa.out = dir / "a";
    ob.out = dir / "b";
    ASSERT_EQ(run_update(a, oa), kOk);
    ASSERT_EQ(run_update(b, ob), kOk);
    EXPECT_EQ(read_text(dir / "a" / "summary.csv"), read_text(dir / "b" / "summary.csv"));
}

#ifdef MODUPDATE_CLI_PATH
TEST(Binary, ExitCodes) {
    const std::string exe = MODUPDATE_CLI_PATH;
    const fs::path dir = scratch("binary");
    const fs::path cfg = write_text(dir / "chain.json", kChain3);
    EXPECT_EQ(exit_status(exe + " update " + cfg.string() + " --out " + (dir / "out").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "minima.json"));
    EXPECT_EQ(exit_status(exe + " sensitivity " + cfg.string() + " --out " + (dir / "out").string() + " --seed 4"), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "eet_long.csv"));
    EXPECT_EQ(exit_status(exe + " solve " + cfg.string() + " --at 1,1"), 0);
    EXPECT_EQ(exit_status(exe + " solve " + cfg.string() + " --at 1,x"), 2);
    EXPECT_EQ(exit_status(exe + " update " + write_text(dir / "bad.json", "{,}").string()), 2);
    EXPECT_EQ(exit_status(exe + " update " + cfg.string() + " --max-depth two"), 2);
    EXPECT_EQ(exit_status(exe), 2);
}
#endif
