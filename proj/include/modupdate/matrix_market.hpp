#pragma once

// Matrix Market coordinate I/O and the JSON manifest describing an AffinePencil on disk.
//
// Manifest layout:
//   { "n": 2, "p": 2,
//     "K0": "k0.mtx", "M0": "m0.mtx",          // null -> zero matrix
//     "K": ["k1.mtx", "k2.mtx"], "M": [null, null],
//     "labels": ["k1", "k2"], "units": ["N/m", "N/m"] }
// Relative paths are resolved against the manifest's directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modupdate/model.hpp"

namespace modupdate {

namespace fs = std::filesystem;

/// Reads a real coordinate Matrix Market file. Symmetric files are expanded to full storage.
inline SparseMatrix read_matrix_market(const fs::path& path) {
    const std::string file = path.string();
    std::ifstream in(path);
    if (!in) throw IoError(file, "cannot open file");

    std::string line;
    if (!std::getline(in, line)) throw FormatError(file, "empty file");
    std::istringstream header(line);
    std::string banner, object, format, field, symmetry;
    header >> banner >> object >> format >> field >> symmetry;
    auto lower = [](std::string s) {
        for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    object = lower(object);
    format = lower(format);
    field = lower(field);
    symmetry = lower(symmetry);
    if (banner != "%%MatrixMarket" || object != "matrix")
        throw FormatError(file, "missing %%MatrixMarket matrix banner");
    if (format != "coordinate") throw FormatError(file, "only coordinate format is supported");
    if (field == "pattern") throw FormatError(file, "pattern-only matrix carries no values");
    if (field != "real" && field != "integer" && field != "double")
        throw FormatError(file, "unsupported field '" + field + "'");
    if (symmetry != "symmetric" && symmetry != "general")
        throw FormatError(file, "unsupported symmetry '" + symmetry + "'");
    const bool symmetric = symmetry == "symmetric";

    while (std::getline(in, line))
        if (!line.empty() && line[0] != '%') break;
    long rows = 0, cols = 0, entries = 0;
    {
        std::istringstream size_line(line);
        if (!(size_line >> rows >> cols >> entries) || rows <= 0 || cols <= 0 || entries < 0)
            throw FormatError(file, "malformed size line");
    }
    if (rows != cols) throw DimensionError(file, "matrix is not square");

    std::vector<Eigen::Triplet<double, int>> trip;
    trip.reserve(static_cast<std::size_t>(symmetric ? 2 * entries : entries));
    long read = 0;
    while (read < entries && std::getline(in, line)) {
        if (line.empty() || line[0] == '%') continue;
        std::istringstream es(line);
        long r = 0, c = 0;
        double v = 0.0;
        if (!(es >> r >> c >> v)) throw FormatError(file, "malformed entry on data line " + std::to_string(read + 1));
        if (r < 1 || c < 1 || r > rows || c > cols)
            throw FormatError(file, "entry index out of range on data line " + std::to_string(read + 1));
        trip.emplace_back(static_cast<int>(r - 1), static_cast<int>(c - 1), v);
        if (symmetric && r != c) trip.emplace_back(static_cast<int>(c - 1), static_cast<int>(r - 1), v);
        ++read;
    }
    if (read != entries) throw FormatError(file, "expected " + std::to_string(entries) + " entries, read " + std::to_string(read));
    SparseMatrix a(rows, cols);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();
    return a;
}

/// Writes the lower triangle of a symmetric matrix with 17 significant digits.
inline void write_matrix_market(const fs::path& path, const SparseMatrix& a) {
    std::vector<std::tuple<int, int, double>> lower;
    for (int k = 0; k < a.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(a, k); it; ++it)
            if (it.row() >= it.col() && it.value() != 0.0)
                lower.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    std::ofstream out(path);
    if (!out) throw IoError(path.string(), "cannot open file for writing");
    out << "%%MatrixMarket matrix coordinate real symmetric\n";
    out << a.rows() << ' ' << a.cols() << ' ' << lower.size() << '\n';
    char buf[64];
    for (const auto& [r, c, v] : lower) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << r + 1 << ' ' << c + 1 << ' ' << buf << '\n';
    }
    if (!out) throw IoError(path.string(), "write failed");
}

/// Loads a pencil from a manifest. Dimension, symmetry and format errors name the file.
inline AffinePencil load_pencil(const fs::path& manifest_path) {
    const std::string mfile = manifest_path.string();
    std::ifstream in(manifest_path);
    if (!in) throw IoError(mfile, "cannot open manifest");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(mfile, std::string("invalid JSON: ") + e.what());
    }
    auto require = [&](const char* key) -> const nlohmann::json& {
        if (!m.contains(key)) throw FormatError(mfile, std::string("missing field '") + key + "'");
        return m.at(key);
    };
    Index n = 0, p = 0;
    try {
        n = require("n").get<Index>();
        p = require("p").get<Index>();
    } catch (const nlohmann::json::type_error&) {
        throw FormatError(mfile, "fields 'n' and 'p' must be integers");
    }
    if (n < 1 || p < 0) throw FormatError(mfile, "invalid n or p");
    const fs::path dir = manifest_path.parent_path();

    std::vector<std::string> names;
    auto load = [&](const nlohmann::json& entry, const std::string& what) -> SparseMatrix {
        if (entry.is_null()) {
            names.push_back(what + " (zero)");
            return SparseMatrix(n, n);
        }
        if (!entry.is_string()) throw FormatError(mfile, what + ": expected a file path or null");
        fs::path path = entry.get<std::string>();
        if (path.is_relative()) path = dir / path;
        names.push_back(path.string());
        SparseMatrix a = read_matrix_market(path);
        if (a.rows() != n)
            throw DimensionError(path.string(), "is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                                    ", manifest declares n = " + std::to_string(n));
        return a;
    };
    auto list = [&](const char* key) -> std::vector<nlohmann::json> {
        if (!m.contains(key) || m.at(key).is_null()) return std::vector<nlohmann::json>(static_cast<std::size_t>(p));
        const auto& arr = m.at(key);
        if (!arr.is_array() || static_cast<Index>(arr.size()) != p)
            throw FormatError(mfile, std::string("field '") + key + "' must be an array of length p");
        return arr.get<std::vector<nlohmann::json>>();
    };

    const SparseMatrix k0 = load(m.value("K0", nlohmann::json()), "K0");
    const SparseMatrix m0 = load(m.value("M0", nlohmann::json()), "M0");
    std::vector<SparseMatrix> kc, mc;
    const auto kl = list("K");
    const auto ml = list("M");
    for (Index j = 0; j < p; ++j) kc.push_back(load(kl[static_cast<std::size_t>(j)], "K" + std::to_string(j + 1)));
    for (Index j = 0; j < p; ++j) mc.push_back(load(ml[static_cast<std::size_t>(j)], "M" + std::to_string(j + 1)));

    std::vector<std::string> labels, units;
    if (m.contains("labels")) labels = m.at("labels").get<std::vector<std::string>>();
    if (m.contains("units")) units = m.at("units").get<std::vector<std::string>>();
    return AffinePencil::from_components(k0, m0, kc, mc, std::move(labels), std::move(units), names);
}

/// Writes one Matrix Market file per non-zero component plus `manifest.json` into `dir`.
inline fs::path save_pencil(const AffinePencil& pencil, const fs::path& dir) {
    fs::create_directories(dir);
    const Index p = pencil.params();
    auto emit = [&](Part part, Index j, const std::string& stem) -> nlohmann::ordered_json {
        if (pencil.component_is_zero(part, j)) return nullptr;
        const std::string name = stem + ".mtx";
        write_matrix_market(dir / name, SparseMatrix(pencil.component(part, j)));
        return name;
    };
    nlohmann::ordered_json m;
    m["n"] = pencil.dofs();
    m["p"] = p;
    m["K0"] = emit(Part::Stiffness, -1, "K0");
    m["M0"] = emit(Part::Mass, -1, "M0");
    m["K"] = nlohmann::ordered_json::array();
    m["M"] = nlohmann::ordered_json::array();
    for (Index j = 0; j < p; ++j) m["K"].push_back(emit(Part::Stiffness, j, "K" + std::to_string(j + 1)));
    for (Index j = 0; j < p; ++j) m["M"].push_back(emit(Part::Mass, j, "M" + std::to_string(j + 1)));
    m["labels"] = pencil.labels();
    m["units"] = pencil.units();
    const fs::path out = dir / "manifest.json";
    std::ofstream f(out);
    if (!f) throw IoError(out.string(), "cannot open file for writing");
    f << m.dump(2) << '\n';
    return out;
}

}  // namespace modupdate
