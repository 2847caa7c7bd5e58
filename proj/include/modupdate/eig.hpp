#pragma once

// Lowest eigenpairs of K(x) u = lambda M(x) u by shift-invert Lanczos (shift 0) with full
// M-reorthogonalization and thick restarts, plus the frequency Jacobian.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "modupdate/model.hpp"

namespace modupdate {

struct SolverOptions {
    double tol = 1e-9;           ///< relative residual ||K u - lambda M u|| / ||K u||
    int max_restarts = 200;
    Index subspace = 0;          ///< 0: max(2q + 10, 30), capped at n
    Index dense_crossover = 600; ///< cross-check against a dense solve up to this size
    bool cross_check = true;
    double cross_check_tol = 1e-7;
    double gap_threshold = 1e-6; ///< minimum relative eigenvalue gap for analytic derivatives
    std::uint64_t seed = 0x243F6A8885A308D3ULL;
};

inline Index default_subspace(Index q) { return std::max<Index>(2 * q + 10, 30); }

struct ModalSolution {
    Vector x;
    Vector lambdas;           ///< ascending, rad^2/s^2
    Vector freqs;             ///< Hz
    Matrix modes;             ///< n x q, M-orthonormal
    Vector residuals;
    std::vector<bool> gap_ok;
    Matrix basis;             ///< final M-orthonormal Krylov basis (n x m)
    int restarts = 0;

    Index q() const { return lambdas.size(); }
};

inline double frequency_of(double lambda) { return std::sqrt(lambda) / (2.0 * std::numbers::pi); }

namespace detail {

/// Uniform doubles in [-1, 1) from a fixed-algorithm engine, identical across standard libraries.
class StartVectorSource {
public:
    explicit StartVectorSource(std::uint64_t seed) : engine_(seed) {}
    Vector next(Index n) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v[i] = static_cast<double>(engine_() >> 11) * 0x1.0p-52 - 1.0;
        return v;
    }

private:
    std::mt19937_64 engine_;
};

inline std::vector<bool> relative_gaps_ok(const Vector& all_lambdas, Index q, double threshold) {
    std::vector<bool> ok(static_cast<std::size_t>(q), true);
    for (Index i = 0; i < q; ++i) {
        double gap = std::numeric_limits<double>::infinity();
        if (i > 0) gap = std::min(gap, std::abs(all_lambdas[i] - all_lambdas[i - 1]));
        if (i + 1 < all_lambdas.size()) gap = std::min(gap, std::abs(all_lambdas[i + 1] - all_lambdas[i]));
        ok[static_cast<std::size_t>(i)] = gap / std::abs(all_lambdas[i]) >= threshold;
    }
    return ok;
}

/// Sign convention: largest-magnitude entry of each mode is positive.
inline void normalize_signs(Matrix& modes) {
    for (Index c = 0; c < modes.cols(); ++c) {
        Index imax = 0;
        modes.col(c).cwiseAbs().maxCoeff(&imax);
        if (modes(imax, c) < 0.0) modes.col(c) *= -1.0;
    }
}

inline Vector residual_norms(const SparseMatrix& k, const SparseMatrix& m, const Matrix& modes,
                             const Vector& lambdas) {
    Vector r(lambdas.size());
    for (Index i = 0; i < lambdas.size(); ++i) {
        const Vector ku = k * modes.col(i);
        const Vector res = ku - lambdas[i] * (m * modes.col(i));
        const double denom = ku.norm();
        r[i] = denom > 0.0 ? res.norm() / denom : res.norm();
    }
    return r;
}

}  // namespace detail

/// Dense reference solve of the full pencil; used as cross-check for small models.
inline ModalSolution solve_modes_dense(const AffinePencil& pencil, const Vector& x, Index q,
                                       double gap_threshold = 1e-6) {
    const Index n = pencil.dofs();
    if (q < 1 || q > n) throw InvalidArgument("solve_modes: q must satisfy 1 <= q <= n");
    const auto [ks, ms] = pencil.assemble(x);
    const Matrix k = Matrix(ks);
    const Matrix m = Matrix(ms);
    Eigen::LLT<Matrix> mllt(m);
    if (mllt.info() != Eigen::Success)
        throw InfeasibleError("mass matrix not positive definite at x = " + format_vector(x));
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(k, m);
    if (es.info() != Eigen::Success) throw ConvergenceError("dense generalized eigensolver failed");
    if (es.eigenvalues()[0] <= 0.0)
        throw InfeasibleError("stiffness matrix not positive definite at x = " + format_vector(x));
    ModalSolution sol;
    sol.x = x;
    sol.lambdas = es.eigenvalues().head(q);
    sol.freqs = sol.lambdas.unaryExpr([](double l) { return frequency_of(l); });
    sol.modes = es.eigenvectors().leftCols(q);
    detail::normalize_signs(sol.modes);
    sol.residuals = detail::residual_norms(ks, ms, sol.modes, sol.lambdas);
    sol.gap_ok = detail::relative_gaps_ok(es.eigenvalues().head(std::min(q + 1, n)), q, gap_threshold);
    sol.basis = sol.modes;
    return sol;
}

/// The q smallest eigenpairs of K(x) u = lambda M(x) u.
///
/// Krylov space of (K^{-1} M) in the M inner product with a random start vector and full
/// classical Gram-Schmidt reorthogonalization (two passes). Ritz pairs are extracted by a
/// Rayleigh-Ritz projection of the full pencil. When unconverged, the basis is truncated to
/// the lowest Ritz vectors plus the next Krylov direction (thick restart).
///
/// Throws InfeasibleError when K(x) or M(x) has no Cholesky factorization and
/// ConvergenceError (carrying the best residuals) after `max_restarts`.
inline ModalSolution solve_modes(const AffinePencil& pencil, const Vector& x, Index q,
                                 const SolverOptions& opts = {}) {
    const Index n = pencil.dofs();
    if (q < 1 || q > n) throw InvalidArgument("solve_modes: q must satisfy 1 <= q <= n");
    if (!x.allFinite()) throw InvalidArgument("solve_modes: non-finite parameter vector");
    const auto [k, m] = pencil.assemble(x);

    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> kfact(k);
    if (kfact.info() != Eigen::Success)
        throw InfeasibleError("stiffness matrix not positive definite at x = " + format_vector(x));
    if (!detail::is_positive_definite(m))
        throw InfeasibleError("mass matrix not positive definite at x = " + format_vector(x));

    const Index want = opts.subspace > 0 ? opts.subspace : default_subspace(q);
    const Index dim = std::min(n, std::max(want, std::min(q + 1, n)));

    Matrix v(n, dim);   // M-orthonormal basis
    Matrix mv(n, dim);  // M * v
    Matrix ov(n, dim);  // K^{-1} M * v, valid for the first `have_op` columns
    Index cols = 0;
    Index have_op = 0;
    detail::StartVectorSource source(opts.seed);

    // M-orthogonalize w against the first `cols` basis vectors; returns its M-norm.
    auto orthogonalize = [&](Vector& w) -> double {
        for (int pass = 0; pass < 2; ++pass) {
            if (cols == 0) break;
            const Vector h = mv.leftCols(cols).transpose() * w;
            w.noalias() -= v.leftCols(cols) * h;
        }
        const double nrm2 = w.dot(m * w);
        return nrm2 > 0.0 ? std::sqrt(nrm2) : 0.0;
    };
    // Appends a new direction; falls back to random vectors when the Krylov space is invariant.
    auto append = [&](Vector w) -> bool {
        if (cols == n) return false;
        double scale = std::sqrt(std::max(w.dot(m * w), 0.0));
        double beta = orthogonalize(w);
        for (int attempt = 0; !(beta > 1e-10 * scale); ++attempt) {
            if (attempt == 3) return false;
            w = source.next(n);
            scale = std::sqrt(std::max(w.dot(m * w), 0.0));
            beta = orthogonalize(w);
        }
        v.col(cols) = w / beta;
        mv.col(cols) = m * v.col(cols);
        ++cols;
        return true;
    };
    auto apply_operator = [&]() {
        for (; have_op < cols; ++have_op) ov.col(have_op) = kfact.solve(Vector(mv.col(have_op)));
    };

    append(source.next(n));

    ModalSolution sol;
    sol.x = x;
    Vector best_res;
    for (int restart = 0;; ++restart) {
        while (cols < dim) {
            apply_operator();
            if (!append(ov.col(cols - 1))) break;
        }
        apply_operator();

        // Projected operator T = V^T M K^{-1} M V; its largest eigenvalues are 1 / lambda.
        const Matrix t = mv.leftCols(cols).transpose() * ov.leftCols(cols);
        Eigen::SelfAdjointEigenSolver<Matrix> rr(0.5 * (t + t.transpose()));
        if (rr.info() != Eigen::Success) throw ConvergenceError("Rayleigh-Ritz projection failed");
        if (cols < q) throw ConvergenceError("Krylov space smaller than the requested mode count");
        const Vector theta = rr.eigenvalues().reverse();
        const Matrix s = rr.eigenvectors().rowwise().reverse();

        Matrix modes = v.leftCols(cols) * s.leftCols(q);
        Vector lam(q);
        for (Index i = 0; i < q; ++i) {
            const Vector u = modes.col(i);
            lam[i] = u.dot(k * u) / u.dot(m * u);
        }
        const Vector res = detail::residual_norms(k, m, modes, lam);
        if (best_res.size() == 0 || res.maxCoeff() < best_res.maxCoeff()) best_res = res;

        if (res.maxCoeff() <= opts.tol || cols == n) {
            if (!(theta[q - 1] > 0.0) || lam.minCoeff() <= 0.0)
                throw InfeasibleError("non-positive eigenvalue at x = " + format_vector(x));
            if (res.maxCoeff() > opts.tol)
                throw ConvergenceError("residual above tolerance in the full space",
                                       std::vector<double>(res.data(), res.data() + res.size()));
            Vector all = lam;
            if (cols > q) {
                all.conservativeResize(q + 1);
                all[q] = 1.0 / theta[q];
            }
            detail::normalize_signs(modes);
            sol.lambdas = lam;
            sol.freqs = lam.unaryExpr([](double l) { return frequency_of(l); });
            sol.modes = std::move(modes);
            sol.residuals = res;
            sol.gap_ok = detail::relative_gaps_ok(all, q, opts.gap_threshold);
            sol.basis = v.leftCols(cols);
            sol.restarts = restart;
            break;
        }
        if (restart == opts.max_restarts)
            throw ConvergenceError("Lanczos did not converge after " + std::to_string(restart) + " restarts",
                                   std::vector<double>(best_res.data(), best_res.data() + best_res.size()));

        // Thick restart: keep the leading Ritz vectors and continue from the residual
        // direction of the last Krylov vector.
        Vector next = ov.col(cols - 1);
        orthogonalize(next);
        const Index keep = std::min(std::max(q + (dim - q) / 2, q + 1), dim - 1);
        const Matrix kv = v.leftCols(cols) * s.leftCols(keep);
        const Matrix kmv = mv.leftCols(cols) * s.leftCols(keep);
        const Matrix kov = ov.leftCols(cols) * s.leftCols(keep);
        v.leftCols(keep) = kv;
        mv.leftCols(keep) = kmv;
        ov.leftCols(keep) = kov;
        cols = have_op = keep;
        if (!append(std::move(next))) throw ConvergenceError("Krylov continuation vanished");
    }

    if (opts.cross_check && n <= opts.dense_crossover) {
        const ModalSolution ref = solve_modes_dense(pencil, x, q, opts.gap_threshold);
        for (Index i = 0; i < q; ++i)
            if (std::abs(ref.lambdas[i] - sol.lambdas[i]) > opts.cross_check_tol * ref.lambdas[i])
                throw ConvergenceError("Lanczos eigenvalue " + std::to_string(i + 1) +
                                       " disagrees with the dense solve at x = " + format_vector(x));
    }
    return sol;
}

// ---------------------------------------------------------------------------------------------
// Frequency Jacobian

struct FreqJacobian {
    Matrix J;            ///< J(i, j) = d f_i / d x_j
    bool valid = false;  ///< false when some eigenvalue is too close to a neighbour
};

/// Eigenvalue perturbation: d lambda_i / d x_j = u_i^T (K_j - lambda_i M_j) u_i with
/// u_i^T M u_i = 1, and d f_i = d lambda_i / (8 pi^2 f_i).
inline FreqJacobian freq_jacobian(const AffinePencil& pencil, const ModalSolution& sol) {
    const Index q = sol.q();
    const Index p = pencil.params();
    FreqJacobian out;
    out.J.resize(q, p);
    out.valid = true;
    for (Index i = 0; i < q; ++i) {
        if (!(sol.freqs[i] > 0.0)) throw Error("freq_jacobian: zero frequency, derivative scaling is singular");
        if (!sol.gap_ok[static_cast<std::size_t>(i)]) out.valid = false;
        const Vector u = sol.modes.col(i);
        const double scale = 1.0 / (8.0 * std::numbers::pi * std::numbers::pi * sol.freqs[i]);
        for (Index j = 0; j < p; ++j) {
            double dl = 0.0;
            if (!pencil.component_is_zero(Part::Stiffness, j)) dl += pencil.quad_form(Part::Stiffness, j, u);
            if (!pencil.component_is_zero(Part::Mass, j)) dl -= sol.lambdas[i] * pencil.quad_form(Part::Mass, j, u);
            out.J(i, j) = dl * scale;
        }
    }
    return out;
}

/// Central differences of the sorted frequency vector with step rel_step * max(|x_j|, floor_j).
/// When `box` is given, steps are kept inside it (one-sided at the faces). `evaluations`
/// is incremented per eigen-solve.
inline Matrix fd_freq_jacobian(const AffinePencil& pencil, const Vector& x, Index q,
                               const SolverOptions& opts = {}, double rel_step = 1e-6,
                               const ParamBox* box = nullptr, long* evaluations = nullptr) {
    const Index p = pencil.params();
    Matrix J(q, p);
    for (Index j = 0; j < p; ++j) {
        double floor = box ? box->width()[j] : 1.0;
        const double h = rel_step * std::max(std::abs(x[j]), floor);
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        if (box) {
            xp[j] = std::min(xp[j], box->upper[j]);
            xm[j] = std::max(xm[j], box->lower[j]);
        }
        const Vector fp = solve_modes(pencil, xp, q, opts).freqs;
        const Vector fm = solve_modes(pencil, xm, q, opts).freqs;
        if (evaluations) *evaluations += 2;
        J.col(j) = (fp - fm) / (xp[j] - xm[j]);
    }
    return J;
}

/// Analytic Jacobian when every gap is resolved, finite differences otherwise.
inline Matrix frequency_jacobian(const AffinePencil& pencil, const ModalSolution& sol,
                                 const SolverOptions& opts = {}, const ParamBox* box = nullptr,
                                 long* evaluations = nullptr) {
    FreqJacobian a = freq_jacobian(pencil, sol);
    if (a.valid) return std::move(a.J);
    return fd_freq_jacobian(pencil, sol.x, sol.q(), opts, 1e-6, box, evaluations);
}

}  // namespace modupdate
