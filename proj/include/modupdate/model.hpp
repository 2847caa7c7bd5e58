#pragma once

// Parametric stiffness/mass pencils K(x) = K0 + sum_j x_j K_j, M(x) = M0 + sum_j x_j M_j,
// the parameter box, the updating problem definition and two desk-scale structure builders.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "modupdate/error.hpp"

namespace modupdate {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using SparseMap = Eigen::Map<const SparseMatrix>;

inline std::string format_vector(const Vector& x) {
    std::ostringstream os;
    os.precision(17);
    os << '(';
    for (Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
    os << ')';
    return os.str();
}

// ---------------------------------------------------------------------------------------------
// ParamBox

/// Axis-aligned parameter box [a_1,b_1] x ... x [a_p,b_p].
struct ParamBox {
    Vector lower;
    Vector upper;
    std::vector<std::string> labels;

    ParamBox() = default;
    ParamBox(Vector lo, Vector hi, std::vector<std::string> names = {})
        : lower(std::move(lo)), upper(std::move(hi)), labels(std::move(names)) {
        if (lower.size() != upper.size() || lower.size() == 0)
            throw InvalidArgument("ParamBox: lower and upper must be non-empty and of equal length");
        for (Index j = 0; j < lower.size(); ++j) {
            if (!std::isfinite(lower[j]) || !std::isfinite(upper[j]))
                throw InvalidArgument("ParamBox: non-finite bound on axis " + std::to_string(j));
            if (!(lower[j] < upper[j]))
                throw InvalidArgument("ParamBox: lower >= upper on axis " + std::to_string(j));
        }
        if (labels.empty()) {
            for (Index j = 0; j < lower.size(); ++j) labels.push_back("x" + std::to_string(j + 1));
        } else if (static_cast<Index>(labels.size()) != lower.size()) {
            throw InvalidArgument("ParamBox: label count does not match dimension");
        }
    }

    Index size() const { return lower.size(); }
    Vector midpoint() const { return 0.5 * (lower + upper); }
    Vector width() const { return upper - lower; }
    double volume() const { return width().prod(); }

    bool contains(const Vector& x) const {
        if (x.size() != size()) return false;
        for (Index j = 0; j < size(); ++j)
            if (!(x[j] >= lower[j] && x[j] <= upper[j])) return false;
        return true;
    }

    Vector clamp(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

    /// Corner selected by the bits of `mask` (bit j set: upper bound on axis j).
    Vector corner(std::uint64_t mask) const {
        Vector c = lower;
        for (Index j = 0; j < size(); ++j)
            if (mask >> j & 1U) c[j] = upper[j];
        return c;
    }

    bool operator==(const ParamBox& o) const {
        return lower == o.lower && upper == o.upper;
    }
};

/// Affine map of physical parameters onto the unit cube of a reference box.
struct BoxScaling {
    Vector origin;
    Vector width;

    explicit BoxScaling(const ParamBox& reference)
        : origin(reference.lower), width(reference.width()) {}

    Vector to_unit(const Vector& x) const { return (x - origin).cwiseQuotient(width); }
    Vector from_unit(const Vector& z) const { return origin + z.cwiseProduct(width); }
    ParamBox to_unit(const ParamBox& b) const {
        return ParamBox(to_unit(b.lower), to_unit(b.upper), b.labels);
    }
};

// ---------------------------------------------------------------------------------------------
// AffinePencil

enum class Part { Stiffness, Mass };

namespace detail {

inline double max_asymmetry(const SparseMatrix& a) {
    SparseMatrix at = a.transpose();
    SparseMatrix d = a - at;
    double m = 0.0;
    for (int k = 0; k < d.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(d, k); it; ++it) m = std::max(m, std::abs(it.value()));
    return m;
}

inline double max_abs(const SparseMatrix& a) {
    double m = 0.0;
    for (int k = 0; k < a.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(a, k); it; ++it) m = std::max(m, std::abs(it.value()));
    return m;
}

inline bool is_positive_definite(const SparseMatrix& a) {
    if (a.rows() == 0) return false;
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(a);
    return llt.info() == Eigen::Success;
}

}  // namespace detail

/// Immutable parametric pencil. All components share one union sparsity pattern; each
/// component is stored as a value array aligned with it.
class AffinePencil {
public:
    static constexpr double kSymmetryTol = 1e-12;

    AffinePencil() = default;

    /// `names[c]` labels component c in error messages (order: K0, M0, K_1..K_p, M_1..M_p).
    static AffinePencil from_components(const SparseMatrix& k0, const SparseMatrix& m0,
                                        const std::vector<SparseMatrix>& k_comps,
                                        const std::vector<SparseMatrix>& m_comps,
                                        std::vector<std::string> labels = {},
                                        std::vector<std::string> units = {},
                                        const std::vector<std::string>& names = {}) {
        const Index n = k0.rows();
        const Index p = static_cast<Index>(k_comps.size());
        if (static_cast<Index>(m_comps.size()) != p)
            throw InvalidArgument("AffinePencil: stiffness and mass component counts differ");
        if (n == 0) throw InvalidArgument("AffinePencil: empty base matrix");

        std::vector<const SparseMatrix*> all;
        all.push_back(&k0);
        for (const auto& c : k_comps) all.push_back(&c);
        all.push_back(&m0);
        for (const auto& c : m_comps) all.push_back(&c);

        auto name_of = [&](std::size_t c) -> std::string {
            const std::size_t up = static_cast<std::size_t>(p);
            if (c < names.size()) return names[c];
            if (c == 0) return "K0";
            if (c <= up) return "K" + std::to_string(c);
            if (c == up + 1) return "M0";
            return "M" + std::to_string(c - up - 1);
        };
        // Canonical order for messages given by the caller is K0, M0, K.., M..; map ours to it.
        auto message_name = [&](std::size_t c) -> std::string {
            if (names.empty()) return name_of(c);
            const std::size_t up = static_cast<std::size_t>(p);
            std::size_t canonical;
            if (c == 0) canonical = 0;
            else if (c <= up) canonical = 1 + c;
            else if (c == up + 1) canonical = 1;
            else canonical = 1 + up + (c - up - 1);
            return canonical < names.size() ? names[canonical] : name_of(c);
        };

        std::vector<Eigen::Triplet<double, int>> pattern;
        for (std::size_t c = 0; c < all.size(); ++c) {
            const SparseMatrix& a = *all[c];
            if (a.rows() != n || a.cols() != n)
                throw DimensionError(message_name(c), "expected " + std::to_string(n) + "x" +
                                                           std::to_string(n) + ", got " +
                                                           std::to_string(a.rows()) + "x" +
                                                           std::to_string(a.cols()));
            const double scale = detail::max_abs(a);
            if (scale > 0.0 && detail::max_asymmetry(a) > kSymmetryTol * scale)
                throw SymmetryError(message_name(c), "matrix is not symmetric within tolerance");
            for (int k = 0; k < a.outerSize(); ++k)
                for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
                    pattern.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), 1.0);
                    pattern.emplace_back(static_cast<int>(it.col()), static_cast<int>(it.row()), 1.0);
                }
        }

        AffinePencil out;
        out.n_ = n;
        out.p_ = p;
        SparseMatrix union_pattern(n, n);
        union_pattern.setFromTriplets(pattern.begin(), pattern.end());
        union_pattern.makeCompressed();
        out.outer_.assign(union_pattern.outerIndexPtr(), union_pattern.outerIndexPtr() + n + 1);
        out.inner_.assign(union_pattern.innerIndexPtr(),
                          union_pattern.innerIndexPtr() + union_pattern.nonZeros());

        // Symmetrized values: 0.5 (A + A^T) on the union pattern.
        out.values_.resize(all.size());
        for (std::size_t c = 0; c < all.size(); ++c) {
            Vector v = Vector::Zero(static_cast<Index>(out.inner_.size()));
            const SparseMatrix& a = *all[c];
            for (int k = 0; k < a.outerSize(); ++k)
                for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
                    v[out.slot(static_cast<int>(it.row()), static_cast<int>(it.col()))] += 0.5 * it.value();
                    v[out.slot(static_cast<int>(it.col()), static_cast<int>(it.row()))] += 0.5 * it.value();
                }
            out.values_[c] = std::move(v);
        }
        out.zero_.resize(all.size());
        for (std::size_t c = 0; c < all.size(); ++c)
            out.zero_[c] = out.values_[c].cwiseAbs().maxCoeff() == 0.0;

        if (labels.empty())
            for (Index j = 0; j < p; ++j) labels.push_back("x" + std::to_string(j + 1));
        if (static_cast<Index>(labels.size()) != p)
            throw InvalidArgument("AffinePencil: label count does not match parameter count");
        if (units.empty()) units.assign(static_cast<std::size_t>(p), "");
        if (static_cast<Index>(units.size()) != p)
            throw InvalidArgument("AffinePencil: unit count does not match parameter count");
        out.labels_ = std::move(labels);
        out.units_ = std::move(units);
        return out;
    }

    Index dofs() const { return n_; }
    Index params() const { return p_; }
    Index pattern_nonzeros() const { return static_cast<Index>(inner_.size()); }
    const std::vector<std::string>& labels() const { return labels_; }
    const std::vector<std::string>& units() const { return units_; }

    /// Base matrix (j == -1) or parameter component j, as a view on the shared pattern.
    SparseMap component(Part part, Index j) const { return view(values_[index_of(part, j)]); }
    bool component_is_zero(Part part, Index j) const { return zero_[index_of(part, j)]; }

    /// u^T A u for component (part, j).
    double quad_form(Part part, Index j, const Vector& u) const {
        const Vector& v = values_[index_of(part, j)];
        double s = 0.0;
        for (Index col = 0; col < n_; ++col)
            for (int k = outer_[col]; k < outer_[col + 1]; ++k) s += v[k] * u[inner_[k]] * u[col];
        return s;
    }

    Vector stiffness_values(const Vector& x) const { return combine(Part::Stiffness, x); }
    Vector mass_values(const Vector& x) const { return combine(Part::Mass, x); }

    SparseMatrix stiffness(const Vector& x) const { return map(stiffness_values(x)); }
    SparseMatrix mass(const Vector& x) const { return map(mass_values(x)); }

    /// (K(x), M(x)).
    std::pair<SparseMatrix, SparseMatrix> assemble(const Vector& x) const {
        return {stiffness(x), mass(x)};
    }

    /// Throws InfeasibleError unless K and M are positive definite at the midpoint and all
    /// corners of `box`.
    void validate_on(const ParamBox& box) const {
        if (box.size() != p_) throw InvalidArgument("AffinePencil: box dimension != parameter count");
        if (p_ > 20) throw InvalidArgument("AffinePencil: corner check limited to p <= 20");
        std::vector<Vector> points{box.midpoint()};
        for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << p_); ++mask) points.push_back(box.corner(mask));
        for (const Vector& x : points) {
            if (!detail::is_positive_definite(stiffness(x)))
                throw InfeasibleError("stiffness matrix not positive definite at x = " + format_vector(x));
            if (!detail::is_positive_definite(mass(x)))
                throw InfeasibleError("mass matrix not positive definite at x = " + format_vector(x));
        }
    }

private:
    std::size_t index_of(Part part, Index j) const {
        if (j < -1 || j >= p_) throw InvalidArgument("AffinePencil: component index out of range");
        const std::size_t base = part == Part::Stiffness ? 0 : static_cast<std::size_t>(p_ + 1);
        return base + static_cast<std::size_t>(j + 1);
    }

    Index slot(int row, int col) const {
        const auto first = inner_.begin() + outer_[col];
        const auto last = inner_.begin() + outer_[col + 1];
        const auto it = std::lower_bound(first, last, row);
        return static_cast<Index>(it - inner_.begin());
    }

    Vector combine(Part part, const Vector& x) const {
        if (x.size() != p_) throw InvalidArgument("AffinePencil: parameter vector has wrong length");
        Vector v = values_[index_of(part, -1)];
        for (Index j = 0; j < p_; ++j)
            if (!component_is_zero(part, j)) v += x[j] * values_[index_of(part, j)];
        return v;
    }

    SparseMap view(const Vector& values) const {
        return SparseMap(n_, n_, static_cast<Index>(inner_.size()), outer_.data(), inner_.data(),
                         values.data());
    }
    SparseMatrix map(const Vector& values) const { return SparseMatrix(view(values)); }

    Index n_ = 0;
    Index p_ = 0;
    std::vector<int> outer_;
    std::vector<int> inner_;
    std::vector<Vector> values_;  // K0, K_1..K_p, M0, M_1..M_p
    std::vector<bool> zero_;
    std::vector<std::string> labels_;
    std::vector<std::string> units_;
};

// ---------------------------------------------------------------------------------------------
// UpdatingProblem

enum class WeightMode { Unit, Relative, Custom };

/// Unnormalized weights for the given mode; `custom` is used only for WeightMode::Custom.
inline Vector make_weights(WeightMode mode, const Vector& targets, const Vector& custom = {}) {
    switch (mode) {
        case WeightMode::Unit: return Vector::Ones(targets.size());
        case WeightMode::Relative: return targets.cwiseInverse();
        case WeightMode::Custom:
            if (custom.size() != targets.size())
                throw InvalidArgument("custom weights: length differs from target count");
            return custom;
    }
    return {};
}

class UpdatingProblem {
public:
    UpdatingProblem(AffinePencil pencil, ParamBox box, Vector targets, Vector weights,
                    double epsilon = 1e-3)
        : pencil_(std::make_shared<const AffinePencil>(std::move(pencil))),
          box_(std::move(box)),
          targets_(std::move(targets)),
          epsilon_(epsilon) {
        const Index q = targets_.size();
        if (box_.size() != pencil_->params())
            throw InvalidArgument("box dimension does not match the pencil's parameter count");
        if (q < box_.size())
            throw InvalidArgument("need at least as many target frequencies as parameters");
        if (q > pencil_->dofs())
            throw InvalidArgument("more target frequencies than degrees of freedom");
        for (Index i = 0; i < q; ++i) {
            if (!(targets_[i] > 0.0) || !std::isfinite(targets_[i]))
                throw InvalidArgument("target frequencies must be positive and finite");
            if (i > 0 && targets_[i] < targets_[i - 1])
                throw InvalidArgument("target frequencies must be sorted ascending");
        }
        if (weights.size() != q) throw InvalidArgument("weight vector length differs from target count");
        if ((weights.array() < 0.0).any() || !weights.allFinite())
            throw InvalidArgument("weights must be finite and nonnegative");
        const double norm = weights.norm();
        if (norm == 0.0) throw InvalidArgument("weight vector is identically zero");
        weights_ = weights / norm;
        if (!(epsilon_ >= 0.0)) throw InvalidArgument("epsilon must be nonnegative");
        pencil_->validate_on(box_);
    }

    const AffinePencil& pencil() const { return *pencil_; }
    const ParamBox& box() const { return box_; }
    const Vector& targets() const { return targets_; }
    /// Normalized to unit Euclidean norm.
    const Vector& weights() const { return weights_; }
    double epsilon() const { return epsilon_; }
    Index q() const { return targets_.size(); }
    Index p() const { return box_.size(); }

private:
    std::shared_ptr<const AffinePencil> pencil_;
    ParamBox box_;
    Vector targets_;
    Vector weights_;
    double epsilon_;
};

// ---------------------------------------------------------------------------------------------
// Builders

/// Fixed-base chain of `n_dof` lumped masses. Spring 0 ties mass 0 to the ground, spring i
/// ties mass i-1 to mass i. `groups[j]` lists the springs whose stiffness is parameter j.
inline AffinePencil build_spring_chain(Index n_dof, std::span<const double> masses,
                                       const std::vector<std::vector<Index>>& groups,
                                       std::vector<std::string> labels = {}) {
    if (n_dof < 1) throw InvalidArgument("spring chain: need at least one degree of freedom");
    if (static_cast<Index>(masses.size()) != n_dof)
        throw InvalidArgument("spring chain: mass count differs from n_dof");
    for (double m : masses)
        if (!(m > 0.0)) throw InvalidArgument("spring chain: masses must be positive");
    std::vector<int> owner(static_cast<std::size_t>(n_dof), -1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw InvalidArgument("spring chain: parameter group " + std::to_string(g) + " is empty");
        for (Index s : groups[g]) {
            if (s < 0 || s >= n_dof) throw InvalidArgument("spring chain: spring index out of range");
            if (owner[static_cast<std::size_t>(s)] != -1)
                throw InvalidArgument("spring chain: spring " + std::to_string(s) + " assigned twice");
            owner[static_cast<std::size_t>(s)] = static_cast<int>(g);
        }
    }
    for (Index s = 0; s < n_dof; ++s)
        if (owner[static_cast<std::size_t>(s)] == -1)
            throw InvalidArgument("spring chain: spring " + std::to_string(s) + " has no parameter group");

    const auto p = groups.size();
    std::vector<std::vector<Eigen::Triplet<double, int>>> k_trip(p);
    for (Index s = 0; s < n_dof; ++s) {
        auto& t = k_trip[static_cast<std::size_t>(owner[static_cast<std::size_t>(s)])];
        const int b = static_cast<int>(s);
        t.emplace_back(b, b, 1.0);
        if (s > 0) {
            const int a = b - 1;
            t.emplace_back(a, a, 1.0);
            t.emplace_back(a, b, -1.0);
            t.emplace_back(b, a, -1.0);
        }
    }
    SparseMatrix k0(n_dof, n_dof);
    SparseMatrix m0(n_dof, n_dof);
    std::vector<Eigen::Triplet<double, int>> m_trip;
    for (Index i = 0; i < n_dof; ++i)
        m_trip.emplace_back(static_cast<int>(i), static_cast<int>(i), masses[static_cast<std::size_t>(i)]);
    m0.setFromTriplets(m_trip.begin(), m_trip.end());
    std::vector<SparseMatrix> kc, mc;
    for (std::size_t g = 0; g < p; ++g) {
        SparseMatrix k(n_dof, n_dof);
        k.setFromTriplets(k_trip[g].begin(), k_trip[g].end());
        kc.push_back(std::move(k));
        mc.emplace_back(n_dof, n_dof);
    }
    std::vector<std::string> units(p, "N/m");
    return AffinePencil::from_components(k0, m0, kc, mc, std::move(labels), std::move(units));
}

/// Prismatic Euler-Bernoulli segment of a cantilever. Its bending stiffness is
/// E * second_moment with E = x[stiffness_param]; its mass per length is rho * area with
/// rho = x[density_param].
struct BeamSegment {
    double length = 1.0;
    Index stiffness_param = 0;
    Index density_param = 0;
    double second_moment = 1.0;
    double area = 1.0;
    int elements = 4;
};

/// Cantilever clamped at its base, segments listed base to tip. dof_per_node = 2 gives
/// planar bending (deflection, rotation); 3 adds the axial displacement.
inline AffinePencil build_cantilever_beam(std::span<const BeamSegment> segments, int dof_per_node = 2,
                                          std::vector<std::string> labels = {}) {
    if (segments.empty()) throw InvalidArgument("cantilever: need at least one segment");
    if (dof_per_node != 2 && dof_per_node != 3)
        throw InvalidArgument("cantilever: dof_per_node must be 2 or 3");
    Index p = 0;
    for (const auto& s : segments) {
        if (!(s.length > 0.0)) throw InvalidArgument("cantilever: zero-length segment");
        if (s.elements < 1) throw InvalidArgument("cantilever: segment needs at least one element");
        if (!(s.second_moment > 0.0) || !(s.area > 0.0))
            throw InvalidArgument("cantilever: section properties must be positive");
        if (s.stiffness_param < 0 || s.density_param < 0)
            throw InvalidArgument("cantilever: negative parameter index");
        p = std::max({p, s.stiffness_param + 1, s.density_param + 1});
    }
    if (!labels.empty()) {
        if (static_cast<Index>(labels.size()) < p)
            throw InvalidArgument("cantilever: parameter index exceeds label count");
        p = static_cast<Index>(labels.size());
    }

    Index elements = 0;
    for (const auto& s : segments) elements += s.elements;
    const int dpn = dof_per_node;
    const Index n = elements * dpn;  // base node clamped
    // Local dof order per node: [axial,] deflection, rotation.
    auto global = [&](Index node, int local) -> int {
        return node == 0 ? -1 : static_cast<int>((node - 1) * dpn + local);
    };

    std::vector<std::vector<Eigen::Triplet<double, int>>> kt(static_cast<std::size_t>(p)), mt(static_cast<std::size_t>(p));
    auto scatter = [&](std::vector<Eigen::Triplet<double, int>>& t, const std::vector<int>& dofs,
                       const Matrix& ke) {
        for (std::size_t a = 0; a < dofs.size(); ++a)
            for (std::size_t b = 0; b < dofs.size(); ++b)
                if (dofs[a] >= 0 && dofs[b] >= 0 && ke(static_cast<Index>(a), static_cast<Index>(b)) != 0.0)
                    t.emplace_back(dofs[a], dofs[b], ke(static_cast<Index>(a), static_cast<Index>(b)));
    };

    Index node = 0;
    for (const auto& s : segments) {
        const double l = s.length / s.elements;
        Matrix kb(4, 4), mb(4, 4);
        kb << 12, 6 * l, -12, 6 * l,
              6 * l, 4 * l * l, -6 * l, 2 * l * l,
              -12, -6 * l, 12, -6 * l,
              6 * l, 2 * l * l, -6 * l, 4 * l * l;
        kb *= s.second_moment / (l * l * l);
        mb << 156, 22 * l, 54, -13 * l,
              22 * l, 4 * l * l, 13 * l, -3 * l * l,
              54, 13 * l, 156, -22 * l,
              -13 * l, -3 * l * l, -22 * l, 4 * l * l;
        mb *= s.area * l / 420.0;
        Matrix ka(2, 2), ma(2, 2);
        ka << 1, -1, -1, 1;
        ka *= s.area / l;
        ma << 2, 1, 1, 2;
        ma *= s.area * l / 6.0;
        const int off = dpn == 3 ? 1 : 0;
        for (int e = 0; e < s.elements; ++e, ++node) {
            const std::vector<int> bend{global(node, off), global(node, off + 1),
                                        global(node + 1, off), global(node + 1, off + 1)};
            scatter(kt[static_cast<std::size_t>(s.stiffness_param)], bend, kb);
            scatter(mt[static_cast<std::size_t>(s.density_param)], bend, mb);
            if (dpn == 3) {
                const std::vector<int> axial{global(node, 0), global(node + 1, 0)};
                scatter(kt[static_cast<std::size_t>(s.stiffness_param)], axial, ka);
                scatter(mt[static_cast<std::size_t>(s.density_param)], axial, ma);
            }
        }
    }

    std::vector<SparseMatrix> kc, mc;
    for (Index j = 0; j < p; ++j) {
        SparseMatrix k(n, n), m(n, n);
        k.setFromTriplets(kt[static_cast<std::size_t>(j)].begin(), kt[static_cast<std::size_t>(j)].end());
        m.setFromTriplets(mt[static_cast<std::size_t>(j)].begin(), mt[static_cast<std::size_t>(j)].end());
        kc.push_back(std::move(k));
        mc.push_back(std::move(m));
    }
    std::vector<std::string> units(static_cast<std::size_t>(p), "");
    for (const auto& s : segments) {
        units[static_cast<std::size_t>(s.stiffness_param)] = "Pa";
        units[static_cast<std::size_t>(s.density_param)] = "kg/m^3";
    }
    return AffinePencil::from_components(SparseMatrix(n, n), SparseMatrix(n, n), kc, mc,
                                         std::move(labels), std::move(units));
}

}  // namespace modupdate
