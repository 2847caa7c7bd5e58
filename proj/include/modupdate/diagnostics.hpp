#pragma once

// Identifiability analysis at a minimum: the relative-scaled Jacobian, per-parameter
// sensitivity norms zeta/eta, their classification, and the pseudominimum ellipsoid.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "modupdate/local_opt.hpp"

namespace modupdate {

/// Js(i, j) = (d f_i / d x_j) * x_hat_j / f_hat_i.
struct ScaledJacobian {
    Matrix Js;
    Vector x_hat;
    Vector f_hat;
};

inline ScaledJacobian scaled_jacobian(const Matrix& jacobian, const Vector& x_hat, const Vector& f_hat) {
    if (jacobian.rows() != f_hat.size() || jacobian.cols() != x_hat.size())
        throw InvalidArgument("scaled_jacobian: Jacobian is " + std::to_string(jacobian.rows()) + "x" +
                              std::to_string(jacobian.cols()) + ", expected " + std::to_string(f_hat.size()) +
                              "x" + std::to_string(x_hat.size()));
    for (Index i = 0; i < f_hat.size(); ++i)
        if (f_hat[i] == 0.0) throw InvalidArgument("scaled_jacobian: zero target frequency");
    ScaledJacobian s;
    s.x_hat = x_hat;
    s.f_hat = f_hat;
    s.Js = f_hat.cwiseInverse().asDiagonal() * jacobian * x_hat.asDiagonal();
    if (!s.Js.allFinite()) throw Error("scaled_jacobian: non-finite entries");
    return s;
}

inline ScaledJacobian scaled_jacobian(const UpdatingProblem& problem, const MinimumRecord& record) {
    Matrix j = record.jacobian;
    if (j.size() == 0 || !j.allFinite())
        j = fd_freq_jacobian(problem.pencil(), record.x_star, problem.q(), {}, 1e-6, &problem.box());
    return scaled_jacobian(j, record.x_star, problem.targets());
}

inline Vector zeta(const Matrix& js) { return js.colwise().norm().transpose(); }
inline Vector zeta(const ScaledJacobian& s) { return zeta(s.Js); }

enum class EtaPath { Unconstrained, Constrained };

struct EtaResult {
    double value = 0.0;
    Vector v;  ///< minimizing direction, v[j] == 1
    EtaPath path = EtaPath::Unconstrained;
    bool degraded = false;  ///< constrained solve hit its iteration cap; value is an upper bound
    int iterations = 0;
};

namespace detail {

inline Matrix drop_column(const Matrix& a, Index j) {
    Matrix out(a.rows(), a.cols() - 1);
    out << a.leftCols(j), a.rightCols(a.cols() - j - 1);
    return out;
}

inline Vector insert_one(const Vector& y, Index j) {
    Vector v(y.size() + 1);
    v << y.head(j), 1.0, y.tail(y.size() - j);
    return v;
}

}  // namespace detail

/// Smallest ||Js v|| over directions with v_j = 1 and the remaining coordinates in the unit ball.
inline EtaResult eta(const Matrix& js, Index j, int max_iterations = 100, double tol = 1e-10) {
    const Index p = js.cols();
    if (j < 0 || j >= p) throw InvalidArgument("eta: parameter index out of range");
    EtaResult r;
    const Vector b = js.col(j);
    if (p == 1) {
        r.v = Vector::Ones(1);
        r.value = b.norm();
        return r;
    }
    const Matrix a = detail::drop_column(js, j);
    Vector y = -a.completeOrthogonalDecomposition().solve(b);
    if (y.norm() > 1.0) {
        r.path = EtaPath::Constrained;
        const auto sol = detail::ball_constrained_lsq(a, b, max_iterations, tol);
        y = sol.y;
        r.iterations = sol.iterations;
        r.degraded = !sol.converged;
    }
    const double value = (a * y + b).norm();
    // y = 0 is feasible and gives zeta_j.
    if (value <= b.norm()) {
        r.value = value;
        r.v = detail::insert_one(y, j);
    } else {
        r.value = b.norm();
        r.v = detail::insert_one(Vector::Zero(p - 1), j);
    }
    return r;
}

inline EtaResult eta(const ScaledJacobian& s, Index j) { return eta(s.Js, j); }

enum class Identifiability { Unidentifiable, Reliable, Mixed };

inline const char* to_string(Identifiability c) {
    switch (c) {
        case Identifiability::Unidentifiable: return "unidentifiable";
        case Identifiability::Reliable: return "reliable";
        case Identifiability::Mixed: return "mixed";
    }
    return "?";
}

inline const char* to_string(EtaPath p) { return p == EtaPath::Unconstrained ? "unconstrained" : "constrained"; }

struct Thresholds {
    double small = 0.1;
    double large = 0.5;
};

inline Identifiability classify(double zeta_j, double eta_j, const Thresholds& t = {}) {
    if (zeta_j < t.small) return Identifiability::Unidentifiable;
    if (eta_j > t.large) return Identifiability::Reliable;
    return Identifiability::Mixed;
}

struct ParameterReliability {
    std::string label;
    double zeta = 0.0;
    double eta = 0.0;
    double inv_zeta = 0.0;
    double inv_eta = 0.0;
    Identifiability cls = Identifiability::Mixed;
    EtaPath eta_path = EtaPath::Unconstrained;
    bool eta_degraded = false;
    double weighted_zeta = 0.0;
    double weighted_eta = 0.0;
};

struct ReliabilityReport {
    ScaledJacobian scaled;
    std::vector<ParameterReliability> params;
    Vector singular_values;  ///< of Js, descending
    Matrix right_vectors;    ///< V of Js = U S V'
};

inline double safe_inverse(double v) { return v > 0.0 ? 1.0 / v : std::numeric_limits<double>::infinity(); }

/// The weighted columns use w rescaled to root-mean-square 1, so unit weights reproduce the
/// unweighted numbers.
inline ReliabilityReport reliability(const ScaledJacobian& s, const Vector& weights, const std::vector<std::string>& labels,
                                     const Thresholds& t = {}) {
    ReliabilityReport rep;
    rep.scaled = s;
    const Index p = s.Js.cols();
    const Vector z = zeta(s.Js);
    Matrix jw = s.Js;
    if (weights.size() == s.Js.rows() && weights.norm() > 0.0)
        jw = (weights * (std::sqrt(static_cast<double>(weights.size())) / weights.norm())).asDiagonal() * s.Js;
    const Vector zw = zeta(jw);
    for (Index j = 0; j < p; ++j) {
        const EtaResult e = eta(s.Js, j);
        ParameterReliability pr;
        pr.label = static_cast<std::size_t>(j) < labels.size() ? labels[static_cast<std::size_t>(j)]
                                                               : "x" + std::to_string(j + 1);
        pr.zeta = z[j];
        pr.eta = e.value;
        pr.inv_zeta = safe_inverse(pr.zeta);
        pr.inv_eta = safe_inverse(pr.eta);
        pr.cls = classify(pr.zeta, pr.eta, t);
        pr.eta_path = e.path;
        pr.eta_degraded = e.degraded;
        pr.weighted_zeta = zw[j];
        pr.weighted_eta = eta(jw, j).value;
        rep.params.push_back(pr);
    }
    const Eigen::JacobiSVD<Matrix> svd(s.Js, Eigen::ComputeFullV);
    rep.singular_values = svd.singularValues();
    rep.right_vectors = svd.matrixV();
    return rep;
}

inline ReliabilityReport reliability(const UpdatingProblem& problem, const MinimumRecord& record,
                                     const Thresholds& t = {}) {
    return reliability(scaled_jacobian(problem, record), problem.weights(), problem.pencil().labels(), t);
}

// ---------------------------------------------------------------------------------------------
// Pseudominimum ellipsoid

/// { x : ||Sigma U' ((x - center) ./ coord_scale)|| <= epsilon }, where U Sigma V' is the SVD of
/// the transposed Jacobian expressed in the same scaled coordinates.
struct EllipsoidSet {
    Vector center;
    Vector sigma;
    Matrix U;
    Vector coord_scale;
    double epsilon = 1e-3;
    bool degraded = false;  ///< no usable Jacobian: plain scaled distance

    double distance(const Vector& x) const {
        const Vector d = (x - center).cwiseQuotient(coord_scale);
        if (degraded) return d.norm();
        return sigma.cwiseProduct(U.transpose() * d).norm();
    }
    bool contains(const Vector& x) const { return distance(x) <= epsilon; }
};

/// `j_scaled` is the q x p Jacobian in scaled coordinates; empty or non-finite gives a degraded set.
inline EllipsoidSet make_ellipsoid(const Vector& center, const Matrix& j_scaled, const Vector& coord_scale,
                                   double epsilon) {
    EllipsoidSet e;
    e.center = center;
    e.coord_scale = coord_scale;
    e.epsilon = epsilon;
    const Index p = center.size();
    if (j_scaled.size() == 0 || !j_scaled.allFinite() || j_scaled.cols() != p) {
        e.degraded = true;
        e.sigma = Vector::Ones(p);
        e.U = Matrix::Identity(p, p);
        return e;
    }
    const Eigen::JacobiSVD<Matrix> svd(j_scaled.transpose(), Eigen::ComputeFullU);
    e.U = svd.matrixU();
    // Directions beyond the rank of the Jacobian carry a zero singular value.
    e.sigma = Vector::Zero(p);
    e.sigma.head(svd.singularValues().size()) = svd.singularValues();
    return e;
}

/// Uses the record's box-relative Jacobian: coordinates (x - a) ./ (b - a), frequencies relative to f_hat.
inline EllipsoidSet ellipsoid(const UpdatingProblem& problem, const MinimumRecord& record, double epsilon) {
    return make_ellipsoid(record.x_star, record.J_scaled, problem.box().width(), epsilon);
}

inline EllipsoidSet ellipsoid(const UpdatingProblem& problem, const MinimumRecord& record) {
    return ellipsoid(problem, record, problem.epsilon());
}

}  // namespace modupdate
