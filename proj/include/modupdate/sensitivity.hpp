#pragma once

// Elementary-effects screening over Latin hypercube base points. Each trajectory is radial: a
// base point plus one step of size delta along every axis in turn, r (p + 1) evaluations total.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "modupdate/global_opt.hpp"

namespace modupdate {

namespace detail {

// Explicit conversions so samples do not depend on the standard library's distributions.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do v = rng();
    while (v >= limit);
    return v % n;
}

}  // namespace detail

/// Latin hypercube sample in `box`: on every axis each of the `count` equal strata holds exactly
/// one coordinate.
inline std::vector<Vector> lhs_sample(const ParamBox& box, Index count, std::uint64_t seed) {
    if (count < 1) throw InvalidArgument("lhs_sample: count must be at least 1");
    const Index p = box.size();
    std::mt19937_64 rng(seed);
    std::vector<Vector> pts(static_cast<std::size_t>(count), Vector(p));
    std::vector<Index> perm(static_cast<std::size_t>(count));
    for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < count; ++k) perm[static_cast<std::size_t>(k)] = k;
        for (Index k = count - 1; k > 0; --k)
            std::swap(perm[static_cast<std::size_t>(k)],
                      perm[static_cast<std::size_t>(detail::bounded(rng, static_cast<std::uint64_t>(k + 1)))]);
        const double w = box.upper[j] - box.lower[j];
        for (Index k = 0; k < count; ++k) {
            const double u = (static_cast<double>(perm[static_cast<std::size_t>(k)]) + detail::unit_uniform(rng)) /
                             static_cast<double>(count);
            pts[static_cast<std::size_t>(k)][j] = std::min(box.lower[j] + u * w, box.upper[j]);
        }
    }
    return pts;
}

struct EETDesign {
    ParamBox box;
    Index r = 10;
    int levels = 4;
    double delta = 0.0;  ///< scaled step; 0 selects levels / (2 (levels - 1))
    std::uint64_t seed = 1;
    unsigned threads = 1;
    double max_drop_fraction = 0.2;

    double step() const { return delta > 0.0 ? delta : levels / (2.0 * (levels - 1)); }

    void validate() const {
        if (box.size() < 1) throw InvalidArgument("EET design: empty box");
        if (r < 1) throw InvalidArgument("EET design: r must be at least 1");
        if (levels < 2) throw InvalidArgument("EET design: levels must be at least 2");
        if (!(step() > 0.0 && step() < 1.0)) throw InvalidArgument("EET design: delta must lie in (0, 1)");
    }
};

/// Trajectory t: point 0 is the base, point j + 1 moves axis j by delta (scaled) from the base.
inline std::vector<std::vector<Vector>> eet_trajectories(const EETDesign& design) {
    design.validate();
    const Index p = design.box.size();
    const double d = design.step();
    const ParamBox unit_base(Vector::Zero(p), Vector::Constant(p, 1.0 - d));
    const auto bases = lhs_sample(unit_base, design.r, design.seed);
    const BoxScaling s(design.box);
    std::vector<std::vector<Vector>> out;
    out.reserve(bases.size());
    for (const Vector& z : bases) {
        std::vector<Vector> traj;
        traj.push_back(design.box.clamp(s.from_unit(z)));
        for (Index j = 0; j < p; ++j) {
            Vector zj = z;
            zj[j] += d;
            traj.push_back(design.box.clamp(s.from_unit(zj)));
        }
        out.push_back(std::move(traj));
    }
    return out;
}

struct EETReport {
    Matrix mu_star;  ///< q x p, mean |EE|
    Matrix mu;       ///< q x p, mean EE
    Matrix sigma;    ///< q x p, sample standard deviation of EE
    long evaluations = 0;
    Index trajectories = 0;
    Index dropped = 0;
    std::vector<std::string> labels;
};

using ModelFunction = std::function<Vector(const Vector&)>;

inline EETReport elementary_effects(const ModelFunction& g, const EETDesign& design) {
    const auto trajs = eet_trajectories(design);
    const Index p = design.box.size();
    const double d = design.step();
    const std::size_t r = trajs.size();

    std::vector<std::vector<Vector>> values(r);
    std::vector<char> ok(r, 1);
    std::vector<long> evals(r, 0);
    detail::parallel_for(r, design.threads, [&](std::size_t t) {
        values[t].reserve(static_cast<std::size_t>(p + 1));
        try {
            for (const Vector& x : trajs[t]) {
                ++evals[t];
                Vector y = g(x);
                if (!y.allFinite()) throw Error("non-finite model output");
                values[t].push_back(std::move(y));
            }
        } catch (const std::exception&) {
            ok[t] = 0;
        }
    });
    Index q = -1;
    for (std::size_t t = 0; t < r; ++t)
        for (const Vector& y : values[t]) {
            if (q < 0) q = y.size();
            if (ok[t] && y.size() != q) throw InvalidArgument("elementary effects: model output size varies");
        }

    EETReport rep;
    rep.labels = design.box.labels;
    for (std::size_t t = 0; t < r; ++t) {
        rep.evaluations += evals[t];
        if (!ok[t]) ++rep.dropped;
    }
    rep.trajectories = static_cast<Index>(r) - rep.dropped;
    if (static_cast<double>(rep.dropped) > design.max_drop_fraction * static_cast<double>(r) || rep.trajectories == 0)
        throw Error("elementary effects: " + std::to_string(rep.dropped) + " of " + std::to_string(r) +
                    " trajectories failed to evaluate");

    rep.mu_star = Matrix::Zero(q, p);
    rep.mu = Matrix::Zero(q, p);
    rep.sigma = Matrix::Zero(q, p);
    std::vector<Matrix> ee;
    for (std::size_t t = 0; t < r; ++t) {
        if (!ok[t]) continue;
        Matrix e(q, p);
        for (Index j = 0; j < p; ++j)
            e.col(j) = (values[t][static_cast<std::size_t>(j + 1)] - values[t][0]) / d;
        ee.push_back(std::move(e));
    }
    const double n = static_cast<double>(ee.size());
    for (const Matrix& e : ee) {
        rep.mu += e / n;
        rep.mu_star += e.cwiseAbs() / n;
    }
    if (ee.size() > 1) {
        for (const Matrix& e : ee) rep.sigma += (e - rep.mu).cwiseAbs2();
        rep.sigma = (rep.sigma / (n - 1.0)).cwiseSqrt();
    }
    return rep;
}

/// Frequencies of the first q modes as functions of the parameters; infeasible points drop the trajectory.
inline EETReport elementary_effects(const AffinePencil& pencil, Index q, const EETDesign& design,
                                    const SolverOptions& opts = {}) {
    const ModelFunction g = [&](const Vector& x) { return solve_modes(pencil, x, q, opts).freqs; };
    EETReport rep = elementary_effects(g, design);
    if (!pencil.labels().empty()) rep.labels = pencil.labels();
    return rep;
}

inline EETReport elementary_effects(const UpdatingProblem& problem, const EETDesign& design,
                                    const SolverOptions& opts = {}) {
    return elementary_effects(problem.pencil(), problem.q(), design, opts);
}

/// Parameter indices sorted by decreasing value (ties by index).
inline std::vector<Index> ranking(const Vector& scores) {
    std::vector<Index> idx(static_cast<std::size_t>(scores.size()));
    for (Index j = 0; j < scores.size(); ++j) idx[static_cast<std::size_t>(j)] = j;
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
    return idx;
}

/// One score per parameter: Euclidean norm of the column over all outputs.
inline Vector column_norms(const Matrix& m) { return m.colwise().norm().transpose(); }

}  // namespace modupdate
