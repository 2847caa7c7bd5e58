#pragma once

// Bound-constrained minimization of phi(x) = sum_i w_i^2 (f_i(x) - fhat_i)^2 by a trust-region
// method whose inner model is a reduced-order projection of the pencil.

#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <limits>
#include <optional>
#include <vector>

#include "modupdate/eig.hpp"

namespace modupdate {

struct LocalOptions {
    double gradient_tol = 1e-8;   ///< scaled projected-gradient norm
    double step_tol = 1e-10;      ///< scaled step / trust radius
    int max_iterations = 200;
    double initial_radius = 0.1;  ///< fraction of the scaled box diagonal
    double shrink = 0.25;
    double expand = 2.0;
    double accept_ratio = 0.1;
    double expand_ratio = 0.75;
    int inner_iterations = 5;     ///< Gauss-Newton steps on the surrogate per outer iteration
    int max_infeasible = 20;      ///< consecutive non-PD trial points before giving up
    Index surrogate_size = 0;     ///< 0: max(2q + 10, 30), capped at n
    SolverOptions solver;
};

/// phi(x) with the problem's normalized weights.
inline double objective(const UpdatingProblem& problem, const Vector& x, const SolverOptions& opts = {}) {
    const ModalSolution s = solve_modes(problem.pencil(), x, problem.q(), opts);
    return problem.weights().cwiseProduct(s.freqs - problem.targets()).squaredNorm();
}

// ---------------------------------------------------------------------------------------------
// Reduced-order surrogate

/// Galerkin projection of the parametric pencil onto a basis containing the Lanczos vectors at
/// the centre. Evaluation costs O(m^3) independent of n.
class SurrogateModel {
public:
    struct Evaluation {
        bool feasible = false;
        Vector lambdas;
        Vector freqs;
        Matrix jacobian;  ///< d f_i / d x_j
    };

    SurrogateModel(const AffinePencil& pencil, const ModalSolution& at_center, Index q, Index m = 0)
        : q_(q), center_(at_center.x) {
        if (m == 0) m = std::min(pencil.dofs(), default_subspace(q));
        if (m < q) throw InvalidArgument("surrogate: basis size m must be at least q");
        Matrix merged(at_center.basis.rows(), at_center.modes.cols() + at_center.basis.cols());
        merged << at_center.modes, at_center.basis;
        Matrix basis = orthonormal_span(merged, m);
        if (basis.cols() < q) throw InvalidArgument("surrogate: basis has fewer than q directions");
        set_basis(pencil, std::move(basis));
    }

    const Vector& center() const { return center_; }
    Index size() const { return basis_.cols(); }
    const Matrix& basis() const { return basis_; }

    /// Adds directions (e.g. full-model modes at another point) to the basis.
    void enrich(const AffinePencil& pencil, const Matrix& directions) {
        Matrix merged(basis_.rows(), basis_.cols() + directions.cols());
        merged << basis_, directions;
        set_basis(pencil, orthonormal_span(merged));
    }

    Evaluation evaluate(const Vector& x, bool with_jacobian = true) const {
        Evaluation out;
        Matrix kr = k0_;
        Matrix mr = m0_;
        for (std::size_t j = 0; j < kc_.size(); ++j) {
            kr += x[static_cast<Index>(j)] * kc_[j];
            mr += x[static_cast<Index>(j)] * mc_[j];
        }
        Eigen::LLT<Matrix> mllt(mr);
        if (mllt.info() != Eigen::Success) return out;
        Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(kr, mr);
        if (es.info() != Eigen::Success || !(es.eigenvalues()[0] > 0.0)) return out;
        out.feasible = true;
        out.lambdas = es.eigenvalues().head(q_);
        out.freqs = out.lambdas.unaryExpr([](double l) { return frequency_of(l); });
        if (with_jacobian) {
            const Index p = static_cast<Index>(kc_.size());
            out.jacobian.resize(q_, p);
            for (Index i = 0; i < q_; ++i) {
                const Vector y = es.eigenvectors().col(i);
                const double scale = 1.0 / (8.0 * std::numbers::pi * std::numbers::pi * out.freqs[i]);
                for (Index j = 0; j < p; ++j) {
                    const auto ju = static_cast<std::size_t>(j);
                    out.jacobian(i, j) = (y.dot(kc_[ju] * y) - out.lambdas[i] * y.dot(mc_[ju] * y)) * scale;
                }
            }
        }
        return out;
    }

private:
    /// Euclidean-orthonormal basis of the leading columns of `a`, in column order, dropping
    /// (numerically) dependent ones; at most `limit` columns.
    static Matrix orthonormal_span(const Matrix& a, Index limit = std::numeric_limits<Index>::max()) {
        Matrix q(a.rows(), std::min(a.cols(), limit));
        Index k = 0;
        for (Index c = 0; c < a.cols() && k < q.cols(); ++c) {
            Vector v = a.col(c);
            const double norm0 = v.norm();
            if (norm0 == 0.0) continue;
            for (int pass = 0; pass < 2; ++pass) v -= q.leftCols(k) * (q.leftCols(k).transpose() * v);
            const double nv = v.norm();
            if (nv <= 1e-10 * norm0) continue;
            q.col(k++) = v / nv;
        }
        return q.leftCols(k);
    }

    void set_basis(const AffinePencil& pencil, Matrix basis) {
        basis_ = std::move(basis);
        auto project = [&](Part part, Index j) -> Matrix {
            if (pencil.component_is_zero(part, j)) return Matrix::Zero(basis_.cols(), basis_.cols());
            const Matrix av = pencil.component(part, j) * basis_;
            const Matrix r = basis_.transpose() * av;
            return 0.5 * (r + r.transpose());
        };
        k0_ = project(Part::Stiffness, -1);
        m0_ = project(Part::Mass, -1);
        kc_.clear();
        mc_.clear();
        for (Index j = 0; j < pencil.params(); ++j) {
            kc_.push_back(project(Part::Stiffness, j));
            mc_.push_back(project(Part::Mass, j));
        }
    }

    Index q_;
    Vector center_;
    Matrix basis_;
    Matrix k0_, m0_;
    std::vector<Matrix> kc_, mc_;
};

/// Solves the full model at `x_c` and projects onto its Lanczos basis (m vectors).
inline SurrogateModel build_surrogate(const AffinePencil& pencil, const Vector& x_c, Index q, Index m = 0,
                                      const SolverOptions& opts = {}) {
    if (m != 0 && m < q) throw InvalidArgument("surrogate: basis size m must be at least q");
    SolverOptions o = opts;
    if (m > 0) o.subspace = std::max(o.subspace, m);
    return SurrogateModel(pencil, solve_modes(pencil, x_c, q, o), q, m);
}

// ---------------------------------------------------------------------------------------------
// Local solve

enum class BoundSide { Lower, Upper };

struct ActiveBound {
    Index index = 0;
    BoundSide side = BoundSide::Lower;
    bool original_face = false;  ///< face of the full parameter box, not a subdivision face
};

struct MinimumRecord {
    Vector x_star;
    double phi = 0.0;
    Vector freqs;
    Matrix jacobian;   ///< d f_i / d x_j at x_star
    Matrix J_scaled;   ///< (d f_i / d x_j) (b_j - a_j) / fhat_i, box-relative
    bool jacobian_valid = true;
    std::vector<ActiveBound> active_bounds;
    ParamBox box;
    int iterations = 0;
    bool converged = false;
    long evaluations = 0;
    double projected_gradient = 0.0;
    std::vector<double> phi_history;  ///< accepted full-model objective values, start first

    bool on_internal_face() const {
        for (const auto& b : active_bounds)
            if (!b.original_face) return true;
        return false;
    }
};

namespace detail {

/// min ||A y + b|| subject to ||y|| <= 1, given that the minimum-norm least-squares solution
/// lies outside the ball. The solution is y(mu) = -(A'A + mu I)^-1 A'b on ||y(mu)|| = 1; mu is
/// found by safeguarded Newton iteration on 1/||y(mu)|| - 1.
struct BallSolution {
    Vector y;
    int iterations = 0;
    bool converged = false;
};

inline BallSolution ball_constrained_lsq(const Matrix& a, const Vector& b, int max_iterations, double tol) {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(a.transpose() * a);
    const Vector& lam = es.eigenvalues();
    const Vector c = es.eigenvectors().transpose() * (a.transpose() * b);
    auto norm_at = [&](double mu, double* deriv) {
        double s = 0.0, ds = 0.0;
        for (Index i = 0; i < c.size(); ++i) {
            const double d = std::max(lam[i], 0.0) + mu;
            if (c[i] == 0.0) continue;
            s += c[i] * c[i] / (d * d);
            ds += -2.0 * c[i] * c[i] / (d * d * d);
        }
        if (deriv) *deriv = ds;
        return std::sqrt(s);
    };
    auto y_at = [&](double mu) {
        Vector t(c.size());
        for (Index i = 0; i < c.size(); ++i) {
            const double d = std::max(lam[i], 0.0) + mu;
            t[i] = c[i] == 0.0 ? 0.0 : -c[i] / d;
        }
        return Vector(es.eigenvectors() * t);
    };

    BallSolution out;
    double lo = 0.0, hi = c.norm();
    double mu = 0.5 * hi;
    for (int it = 1; it <= max_iterations; ++it) {
        out.iterations = it;
        double ds = 0.0;
        const double nrm = norm_at(mu, &ds);
        if (std::abs(nrm - 1.0) <= tol) {
            out.converged = true;
            break;
        }
        if (nrm > 1.0) lo = mu;
        else hi = mu;
        // Newton on g(mu) = 1/||y|| - 1, which is close to linear in mu.
        const double g = 1.0 / nrm - 1.0;
        const double dg = -ds / (2.0 * nrm * nrm * nrm);
        double next = dg != 0.0 ? mu - g / dg : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        mu = next;
    }
    out.y = y_at(mu);
    const double n = out.y.norm();
    if (n > 1.0) out.y /= n;
    return out;
}

struct FullPoint {
    Vector z;
    Vector x;
    ModalSolution sol;
    Matrix jacobian;
    bool jacobian_valid = true;
    Vector residual;  ///< w .* (f - fhat)
    double phi = 0.0;
    Vector gradient;  ///< d phi / d z
};

class LocalSolver {
public:
    LocalSolver(const UpdatingProblem& problem, const ParamBox& box, const LocalOptions& opts)
        : problem_(problem), box_(box), opts_(opts), scaling_(problem.box()) {
        lo_ = scaling_.to_unit(box.lower);
        hi_ = scaling_.to_unit(box.upper);
    }

    MinimumRecord run(const Vector& x_start) {
        if (!box_.contains(x_start)) throw InvalidArgument("solve_local: start point outside its box");
        const Index q = problem_.q();
        FullPoint cur = evaluate_full(scaling_.to_unit(x_start).cwiseMax(lo_).cwiseMin(hi_), &x_start);
        SurrogateModel sur(problem_.pencil(), cur.sol, q, surrogate_size());
        const double diagonal = (hi_ - lo_).norm();
        double radius = opts_.initial_radius * diagonal;
        int gn_failures = 0;
        int infeasible = 0;

        MinimumRecord rec;
        rec.box = box_;
        rec.phi_history.push_back(cur.phi);
        for (int it = 1; it <= opts_.max_iterations; ++it) {
            rec.iterations = it;
            const double pg = projected_gradient(cur);
            if (pg <= opts_.gradient_tol) {
                rec.converged = true;
                break;
            }
            const bool steepest = gn_failures >= 2;
            const auto step = surrogate_step(sur, cur.z, radius, steepest);
            const double snorm = (step.z - cur.z).norm();
            if (snorm <= opts_.step_tol) {
                radius *= opts_.shrink;
                if (steepest || ++gn_failures < 2) {
                    if (radius <= opts_.step_tol) {
                        rec.converged = true;
                        break;
                    }
                }
                continue;
            }
            const double predicted = step.phi_start - step.phi_end;
            std::optional<FullPoint> trial;
            double rho = -std::numeric_limits<double>::infinity();
            if (predicted > 0.0) {
                try {
                    trial = evaluate_full(step.z);
                    rho = (cur.phi - trial->phi) / predicted;
                    infeasible = 0;
                } catch (const InfeasibleError&) {
                    if (++infeasible >= opts_.max_infeasible) break;
                }
            }
            if (trial && rho >= opts_.accept_ratio && trial->phi < cur.phi) {
                const double old_radius = radius;
                if (rho > opts_.expand_ratio && snorm >= 0.99 * radius)
                    radius = std::min(opts_.expand * radius, diagonal);
                cur = std::move(*trial);
                rec.phi_history.push_back(cur.phi);
                gn_failures = 0;
                if (snorm > 0.5 * old_radius || sur.size() + q > surrogate_cap())
                    sur = SurrogateModel(problem_.pencil(), cur.sol, q, surrogate_size());
                else
                    sur.enrich(problem_.pencil(), cur.sol.modes);
            } else {
                radius *= opts_.shrink;
                if (!steepest) ++gn_failures;
                if (trial) {
                    if (sur.size() + q > surrogate_cap())
                        sur = SurrogateModel(problem_.pencil(), cur.sol, q, surrogate_size());
                    else
                        sur.enrich(problem_.pencil(), trial->sol.modes);
                }
                if (radius <= opts_.step_tol) {
                    rec.converged = true;
                    break;
                }
            }
        }

        rec.x_star = cur.x;
        rec.phi = cur.phi;
        rec.freqs = cur.sol.freqs;
        rec.jacobian = cur.jacobian;
        rec.jacobian_valid = cur.jacobian_valid;
        rec.J_scaled = problem_.targets().cwiseInverse().asDiagonal() * cur.jacobian *
                       problem_.box().width().asDiagonal();
        rec.evaluations = evaluations_;
        rec.projected_gradient = projected_gradient(cur);
        for (Index j = 0; j < cur.x.size(); ++j) {
            if (cur.x[j] == box_.lower[j])
                rec.active_bounds.push_back({j, BoundSide::Lower, box_.lower[j] == problem_.box().lower[j]});
            else if (cur.x[j] == box_.upper[j])
                rec.active_bounds.push_back({j, BoundSide::Upper, box_.upper[j] == problem_.box().upper[j]});
        }
        return rec;
    }

private:
    struct Step {
        Vector z;
        double phi_start = 0.0;
        double phi_end = 0.0;
    };

    Index surrogate_size() const {
        const Index m = opts_.surrogate_size > 0 ? opts_.surrogate_size : default_subspace(problem_.q());
        return std::min(problem_.pencil().dofs(), m);
    }
    Index surrogate_cap() const { return std::min(problem_.pencil().dofs(), 3 * surrogate_size()); }

    /// Physical point for unit coordinates; coordinates on a face map exactly onto it.
    Vector to_physical(const Vector& z) const {
        Vector x = scaling_.from_unit(z);
        for (Index j = 0; j < z.size(); ++j) {
            if (z[j] <= lo_[j]) x[j] = box_.lower[j];
            else if (z[j] >= hi_[j]) x[j] = box_.upper[j];
        }
        return box_.clamp(x);
    }

    FullPoint evaluate_full(const Vector& z, const Vector* exact_x = nullptr) {
        FullPoint pt;
        pt.z = z;
        pt.x = exact_x ? *exact_x : to_physical(z);
        pt.sol = solve_modes(problem_.pencil(), pt.x, problem_.q(), opts_.solver);
        ++evaluations_;
        FreqJacobian analytic = freq_jacobian(problem_.pencil(), pt.sol);
        pt.jacobian_valid = analytic.valid;
        pt.jacobian = analytic.valid ? std::move(analytic.J)
                                     : fd_freq_jacobian(problem_.pencil(), pt.x, problem_.q(), opts_.solver,
                                                        1e-6, &box_, &evaluations_);
        pt.residual = problem_.weights().cwiseProduct(pt.sol.freqs - problem_.targets());
        pt.phi = pt.residual.squaredNorm();
        pt.gradient = 2.0 * residual_jacobian(pt.jacobian).transpose() * pt.residual;
        return pt;
    }

    Matrix residual_jacobian(const Matrix& jacobian) const {
        return problem_.weights().asDiagonal() * jacobian * scaling_.width.asDiagonal();
    }

    double projected_gradient(const FullPoint& pt) const {
        return ((pt.z - pt.gradient).cwiseMax(lo_).cwiseMin(hi_) - pt.z).norm();
    }

    Vector confine(const Vector& z, const Vector& center, double radius) const {
        Vector d = z - center;
        const double nd = d.norm();
        if (nd > radius) d *= radius / nd;
        return (center + d).cwiseMax(lo_).cwiseMin(hi_);
    }

    /// Approximate minimizer of the surrogate objective in the trust region intersected with
    /// the box: projected Gauss-Newton steps, or a single Cauchy step along the projected
    /// steepest-descent direction.
    Step surrogate_step(const SurrogateModel& sur, const Vector& zc, double radius, bool steepest) const {
        const Vector& w = problem_.weights();
        const Vector& fhat = problem_.targets();
        auto phi_of = [&](const SurrogateModel::Evaluation& e) {
            return w.cwiseProduct(e.freqs - fhat).squaredNorm();
        };
        SurrogateModel::Evaluation e = sur.evaluate(to_physical(zc));
        Step step;
        step.z = zc;
        if (!e.feasible) {
            step.phi_start = step.phi_end = std::numeric_limits<double>::infinity();
            return step;
        }
        step.phi_start = step.phi_end = phi_of(e);

        for (int k = 0; k < (steepest ? 1 : opts_.inner_iterations); ++k) {
            const Vector r = w.cwiseProduct(e.freqs - fhat);
            const Matrix jr = residual_jacobian(e.jacobian);
            const Vector g = 2.0 * jr.transpose() * r;
            const Vector& z = step.z;
            std::vector<Index> free;
            for (Index j = 0; j < z.size(); ++j) {
                const bool at_lower = z[j] <= lo_[j] && g[j] > 0.0;
                const bool at_upper = z[j] >= hi_[j] && g[j] < 0.0;
                if (!at_lower && !at_upper) free.push_back(j);
            }
            if (free.empty()) break;
            Vector s = Vector::Zero(z.size());
            if (steepest) {
                Vector d = Vector::Zero(z.size());
                for (Index j : free) d[j] = -g[j];
                const double jd = (jr * d).squaredNorm();
                const double t = jd > 0.0 ? 0.5 * d.squaredNorm() / jd : radius / std::max(d.norm(), 1e-300);
                s = t * d;
            } else {
                const double room = radius - (z - zc).norm();
                if (room <= opts_.step_tol) break;
                Matrix jf(jr.rows(), static_cast<Index>(free.size()));
                for (std::size_t c = 0; c < free.size(); ++c) jf.col(static_cast<Index>(c)) = jr.col(free[c]);
                Vector sf = jf.completeOrthogonalDecomposition().solve(-r);
                if (sf.norm() > room) sf = room * ball_constrained_lsq(room * jf, r, 100, 1e-10).y;
                for (std::size_t c = 0; c < free.size(); ++c) s[free[c]] = sf[static_cast<Index>(c)];
            }
            bool improved = false;
            for (int halving = 0; halving < 6; ++halving, s *= 0.5) {
                const Vector zn = confine(z + s, zc, radius);
                if ((zn - z).norm() <= opts_.step_tol) break;
                SurrogateModel::Evaluation en = sur.evaluate(to_physical(zn));
                if (!en.feasible) continue;
                const double phin = phi_of(en);
                if (phin < step.phi_end) {
                    step.z = zn;
                    step.phi_end = phin;
                    e = std::move(en);
                    improved = true;
                    break;
                }
            }
            if (!improved) break;
        }
        return step;
    }

    const UpdatingProblem& problem_;
    const ParamBox& box_;
    const LocalOptions& opts_;
    BoxScaling scaling_;
    Vector lo_, hi_;
    long evaluations_ = 0;
};

}  // namespace detail

/// Local minimum of phi on `box` (a sub-box of the problem's box) from `x_start`.
///
/// All iterates stay in `box`; accepted objective values are full-model values and strictly
/// decrease. Throws InvalidArgument when the start lies outside the box and InfeasibleError when
/// the model cannot be solved at the start.
inline MinimumRecord solve_local(const UpdatingProblem& problem, const ParamBox& box, const Vector& x_start,
                                 const LocalOptions& opts = {}) {
    if (box.size() != problem.p()) throw InvalidArgument("solve_local: box dimension mismatch");
    detail::LocalSolver solver(problem, box, opts);
    return solver.run(x_start);
}

}  // namespace modupdate
