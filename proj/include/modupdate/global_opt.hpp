#pragma once

// Global search by recursive 2^p subdivision of the parameter box. Each box is searched by a
// local solve started at its midpoint; the recursion continues only inside boxes that produced
// a minimum not already in the registry.

#include <algorithm>
#include <atomic>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "modupdate/diagnostics.hpp"

namespace modupdate {

/// Children in binary counting order: bit j of the child index selects the upper half of axis j.
inline std::vector<ParamBox> subdivide(const ParamBox& box) {
    const Index p = box.size();
    if (p < 1) throw InvalidArgument("subdivide: empty box");
    if (p > 20) throw InvalidArgument("subdivide: too many parameters for 2^p children");
    const Vector mid = box.midpoint();
    std::vector<ParamBox> out;
    out.reserve(std::size_t{1} << p);
    for (std::size_t k = 0; k < (std::size_t{1} << p); ++k) {
        Vector lo = box.lower, hi = box.upper;
        for (Index j = 0; j < p; ++j) {
            if (k >> j & 1U) lo[j] = mid[j];
            else hi[j] = mid[j];
        }
        out.emplace_back(lo, hi, box.labels);
    }
    return out;
}

struct SameMinimumTest {
    bool same = false;
    bool degraded = false;
    double distance = 0.0;
};

inline SameMinimumTest is_same_minimum(const Vector& candidate, const EllipsoidSet& existing) {
    return {existing.contains(candidate), existing.degraded, existing.distance(candidate)};
}

inline SameMinimumTest is_same_minimum(const UpdatingProblem& problem, const MinimumRecord& candidate,
                                       const MinimumRecord& existing, double epsilon) {
    return is_same_minimum(candidate.x_star, ellipsoid(problem, existing, epsilon));
}

struct BoxFailure {
    ParamBox box;
    int depth = 0;
    std::string reason;
};

struct MinimaRegistry {
    std::vector<MinimumRecord> records;
    std::vector<EllipsoidSet> ellipsoids;
    std::vector<int> depths;
    double epsilon = 1e-3;
    Index global_index = -1;
    long boundary_rejects = 0;
    long duplicate_rejects = 0;
    long unconverged = 0;
    long degraded_tests = 0;
    long local_solves = 0;
    long evaluations = 0;
    int max_depth_reached = 0;
    bool budget_exhausted = false;
    std::vector<BoxFailure> failures;

    std::size_t size() const { return records.size(); }
    const MinimumRecord& global() const { return records.at(static_cast<std::size_t>(global_index)); }

    /// Index of the first record whose ellipsoid contains x, or -1.
    Index find(const Vector& x) {
        for (std::size_t i = 0; i < ellipsoids.size(); ++i) {
            const SameMinimumTest t = is_same_minimum(x, ellipsoids[i]);
            if (t.degraded) ++degraded_tests;
            if (t.same) return static_cast<Index>(i);
        }
        return -1;
    }

    void update_global() {
        global_index = -1;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (global_index < 0) {
                global_index = static_cast<Index>(i);
                continue;
            }
            const MinimumRecord& best = records[static_cast<std::size_t>(global_index)];
            const MinimumRecord& r = records[i];
            if (r.phi < best.phi - 1e-14) global_index = static_cast<Index>(i);
            else if (std::abs(r.phi - best.phi) <= 1e-14 &&
                     std::lexicographical_compare(r.x_star.begin(), r.x_star.end(), best.x_star.begin(),
                                                  best.x_star.end()))
                global_index = static_cast<Index>(i);
        }
    }
};

struct GlobalOptions {
    int max_depth = 6;
    long max_local_solves = 10000;
    unsigned threads = 1;  ///< 0: hardware concurrency
    LocalOptions local;
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// Local solver and ellipsoid construction are injected so the recursion can be driven by any
/// objective. `local(box)` returns the record of a solve started at the box midpoint, or throws.
using LocalSearch = std::function<MinimumRecord(const ParamBox&)>;
using EllipsoidOf = std::function<EllipsoidSet(const MinimumRecord&)>;

inline MinimaRegistry search_boxes(const ParamBox& omega, const LocalSearch& local, const EllipsoidOf& ellipsoid_of,
                                   double epsilon, const GlobalOptions& opts = {}) {
    if (opts.max_depth < 0) throw InvalidArgument("max_depth must be nonnegative");
    MinimaRegistry reg;
    reg.epsilon = epsilon;

    struct Outcome {
        std::optional<MinimumRecord> record;
        std::string error;
    };
    auto run_all = [&](const std::vector<ParamBox>& boxes) {
        std::vector<Outcome> out(boxes.size());
        detail::parallel_for(boxes.size(), opts.threads, [&](std::size_t i) {
            try {
                out[i].record = local(boxes[i]);
            } catch (const std::exception& e) {
                out[i].error = e.what();
            }
        });
        return out;
    };

    // Returns true when the record is new and was inserted.
    auto consider = [&](const ParamBox& box, int depth, Outcome& o) {
        ++reg.local_solves;
        if (!o.record) {
            reg.failures.push_back({box, depth, o.error});
            return false;
        }
        MinimumRecord& r = *o.record;
        reg.evaluations += r.evaluations;
        if (!r.converged) {
            ++reg.unconverged;
            return false;
        }
        if (r.on_internal_face()) {
            ++reg.boundary_rejects;
            return false;
        }
        if (reg.find(r.x_star) >= 0) {
            ++reg.duplicate_rejects;
            return false;
        }
        reg.ellipsoids.push_back(ellipsoid_of(r));
        reg.records.push_back(std::move(r));
        reg.depths.push_back(depth);
        return true;
    };

    {
        auto root = run_all({omega});
        consider(omega, 0, root[0]);
    }
    std::vector<ParamBox> frontier{omega};
    for (int depth = 1; depth <= opts.max_depth && !frontier.empty(); ++depth) {
        std::vector<ParamBox> children;
        for (const ParamBox& b : frontier)
            for (ParamBox& c : subdivide(b)) children.push_back(std::move(c));
        const long remaining = opts.max_local_solves - reg.local_solves;
        if (remaining <= 0) {
            reg.budget_exhausted = true;
            break;
        }
        if (static_cast<long>(children.size()) > remaining) {
            children.resize(static_cast<std::size_t>(remaining));
            reg.budget_exhausted = true;
        }
        auto outcomes = run_all(children);
        reg.max_depth_reached = depth;
        std::vector<ParamBox> next;
        for (std::size_t i = 0; i < children.size(); ++i)
            if (consider(children[i], depth, outcomes[i])) next.push_back(children[i]);
        frontier = std::move(next);
        if (reg.budget_exhausted) break;
    }

    if (reg.records.empty()) {
        std::string msg = "no converged minimum in any subproblem (" + std::to_string(reg.local_solves) + " solves";
        if (!reg.failures.empty()) msg += ", first failure: " + reg.failures.front().reason;
        msg += ")";
        if (reg.failures.size() == static_cast<std::size_t>(reg.local_solves)) throw InfeasibleError(msg);
        throw ConvergenceError(msg, {});
    }
    reg.update_global();
    return reg;
}

inline MinimaRegistry solve_global(const UpdatingProblem& problem, const GlobalOptions& opts = {}) {
    const LocalSearch local = [&](const ParamBox& b) {
        return solve_local(problem, b, b.midpoint(), opts.local);
    };
    const EllipsoidOf ell = [&](const MinimumRecord& r) { return ellipsoid(problem, r); };
    return search_boxes(problem.box(), local, ell, problem.epsilon(), opts);
}

}  // namespace modupdate
