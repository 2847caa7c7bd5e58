#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "modupdate/diagnostics.hpp"
#include "oracles.hpp"

using namespace modupdate;

namespace {

Matrix worked_example() {
    Matrix js(2, 2);
    js << 1.0, 1.0, 0.0, 0.1;
    return js;
}

UpdatingProblem chain_problem(double stiffness_scale = 1.0) {
    const std::vector<double> masses{1.0, 1.0};
    AffinePencil pencil = build_spring_chain(2, masses, {{0}, {1}});
    Vector at(2);
    at << stiffness_scale, stiffness_scale;
    const Vector targets = oracle::dense_freqs(pencil, at, 2);
    return UpdatingProblem(pencil, ParamBox(Vector::Constant(2, 0.25), Vector::Constant(2, 4.0)), targets,
                           Vector::Ones(2));
}

MinimumRecord at_point(const UpdatingProblem& prob, const Vector& x) { return solve_local(prob, prob.box(), x); }

/// Brute-force eta: dense sampling of the ball plus a polish of the best sample.
double eta_brute(const Matrix& js, Index j) {
    const Matrix a = detail::drop_column(js, j);
    const Vector b = js.col(j);
    double best = b.norm();
    if (a.cols() == 1) {
        for (int k = 0; k <= 200000; ++k) {
            const double y = -1.0 + 2.0 * k / 200000.0;
            best = std::min(best, (a.col(0) * y + b).norm());
        }
    }
    return best;
}

}  // namespace

TEST(Zeta, ColumnNorms) {
    EXPECT_EQ(zeta(Matrix(Matrix::Identity(3, 3))), Vector::Ones(3));
    const Vector z = zeta(worked_example());
    EXPECT_NEAR(z[0], 1.0, 1e-15);
    EXPECT_NEAR(z[1], std::sqrt(1.01), 1e-15);
    EXPECT_NEAR(z[1], 1.004988, 1e-6);
    Matrix js = worked_example();
    js.col(1).setZero();
    EXPECT_EQ(zeta(js)[1], 0.0);
}

TEST(Eta, WorkedExample) {
    const EtaResult e = eta(worked_example(), 0);
    EXPECT_EQ(e.path, EtaPath::Unconstrained);
    EXPECT_NEAR(e.v[1], -1.0 / 1.01, 1e-14);
    const double expected = std::hypot(1.0 - 1.0 / 1.01, -0.1 / 1.01);
    EXPECT_NEAR(e.value, expected, 1e-14);
    EXPECT_NEAR(e.value, 0.099504, 1e-6);
}

TEST(Eta, SecondParameterNeedsTheConstrainedPath) {
    // The unconstrained minimizer is y = -2, outside the unit ball.
    Matrix js(2, 2);
    js << 0.5, 1.0, 0.0, 0.1;
    const EtaResult e = eta(js, 1);
    EXPECT_EQ(e.path, EtaPath::Constrained);
    EXPECT_FALSE(e.degraded);
    EXPECT_DOUBLE_EQ(e.v[1], 1.0);
    EXPECT_LE(std::abs(e.v[0]), 1.0 + 1e-10);
    // Minimizer of ||(0.5 y + 1, 0.1)|| over |y| <= 1 is y = -1.
    EXPECT_NEAR(e.v[0], -1.0, 1e-9);
    EXPECT_NEAR(e.value, std::hypot(0.5, 0.1), 1e-9);
    EXPECT_NEAR(e.value, eta_brute(js, 1), 1e-8);
}

TEST(Eta, SingleParameterEqualsZeta) {
    Matrix js(3, 1);
    js << 0.3, -0.4, 1.2;
    EXPECT_DOUBLE_EQ(eta(js, 0).value, zeta(js)[0]);
}

TEST(Eta, OrthogonalColumnsEqualZeta) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
        Matrix m(6, 4);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
        const Matrix qm = Eigen::HouseholderQR<Matrix>(m).householderQ() * Matrix::Identity(6, 4);
        Vector scales(4);
        for (Index j = 0; j < 4; ++j) scales[j] = 0.1 + std::abs(g(rng));
        const Matrix js = qm * scales.asDiagonal();
        const Vector z = zeta(js);
        for (Index j = 0; j < 4; ++j) EXPECT_NEAR(eta(js, j).value, z[j], 1e-12);
    }
}

TEST(Eta, NeverExceedsZetaOnRandomMatrices) {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> pick(1, 6);
    for (int t = 0; t < 1000; ++t) {
        const int p = pick(rng);
        const int q = p + pick(rng) - 1;
        Matrix js(q, p);
        for (Index i = 0; i < js.size(); ++i) js.data()[i] = g(rng) * std::pow(10.0, pick(rng) - 3);
        const Vector z = zeta(js);
        for (Index j = 0; j < p; ++j) {
            const EtaResult e = eta(js, j);
            EXPECT_LE(e.value, z[j]);
            EXPECT_GE(e.value, 0.0);
            EXPECT_FALSE(e.degraded);
            EXPECT_EQ(e.v[j], 1.0);
        }
    }
}

TEST(Eta, UnconstrainedSolutionIsLocallyOptimal) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    int checked = 0;
    for (int t = 0; t < 200 && checked < 30; ++t) {
        Matrix js(5, 3);
        for (Index i = 0; i < js.size(); ++i) js.data()[i] = g(rng);
        for (Index j = 0; j < 3; ++j) {
            const EtaResult e = eta(js, j);
            if (e.path != EtaPath::Unconstrained) continue;
            ++checked;
            for (int k = 0; k < 100; ++k) {
                Vector d(3);
                for (Index i = 0; i < 3; ++i) d[i] = g(rng);
                d[j] = 0.0;
                d *= 1e-3 / d.norm();
                EXPECT_GE((js * (e.v + d)).norm(), e.value - 1e-9);
            }
        }
    }
    EXPECT_GE(checked, 30);
}

TEST(Eta, ConstrainedSolutionIsFeasibleAndBeatsSamples) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g;
    int checked = 0;
    for (int t = 0; t < 2000 && checked < 40; ++t) {
        Matrix js(4, 3);
        for (Index i = 0; i < js.size(); ++i) js.data()[i] = g(rng);
        js.col(0) *= 5.0;  // a dominant column pushes the other etas onto the sphere
        for (Index j = 1; j < 3; ++j) {
            const EtaResult e = eta(js, j);
            if (e.path != EtaPath::Constrained) continue;
            ++checked;
            EXPECT_FALSE(e.degraded);
            EXPECT_EQ(e.v[j], 1.0);
            Vector off = e.v;
            off[j] = 0.0;
            EXPECT_LE(off.norm(), 1.0 + 1e-10);
            for (int k = 0; k < 200; ++k) {
                Vector y(3);
                for (Index i = 0; i < 3; ++i) y[i] = g(rng);
                y[j] = 0.0;
                y *= std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng), 0.5) / y.norm();
                y[j] = 1.0;
                EXPECT_GE((js * y).norm(), e.value - 1e-10);
            }
        }
    }
    EXPECT_GE(checked, 40);
}

TEST(Classify, Trichotomy) {
    EXPECT_EQ(classify(0.01, 0.005), Identifiability::Unidentifiable);
    EXPECT_EQ(classify(1.2, 0.9), Identifiability::Reliable);
    EXPECT_EQ(classify(1.2, 0.05), Identifiability::Mixed);
    EXPECT_STREQ(to_string(Identifiability::Mixed), "mixed");
}

TEST(ScaledJacobian, StiffnessScalingGivesOneHalf) {
    const std::vector<double> masses{1.0, 2.0, 1.0};
    const AffinePencil chain = build_spring_chain(3, masses, {{0, 1, 2}});
    Vector x(1);
    x << 1.7;
    const Vector f = oracle::dense_freqs(chain, x, 3);
    const UpdatingProblem prob(chain, ParamBox(Vector::Constant(1, 0.5), Vector::Constant(1, 4.0)), f,
                               Vector::Ones(3));
    const ScaledJacobian s = scaled_jacobian(prob, at_point(prob, x));
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(s.Js(i, 0), 0.5, 1e-10);
}

TEST(ScaledJacobian, MassScalingGivesMinusOneHalf) {
    SparseMatrix k(2, 2), m(2, 2);
    k.insert(0, 0) = 3.0;
    k.insert(0, 1) = -1.0;
    k.insert(1, 0) = -1.0;
    k.insert(1, 1) = 1.0;
    m.insert(0, 0) = 1.0;
    m.insert(1, 1) = 2.0;
    const AffinePencil pencil = AffinePencil::from_components(k, SparseMatrix(2, 2), {SparseMatrix(2, 2)}, {m});
    Vector x(1);
    x << 0.8;
    const Vector f = oracle::dense_freqs(pencil, x, 2);
    const UpdatingProblem prob(pencil, ParamBox(Vector::Constant(1, 0.5), Vector::Constant(1, 2.0)), f,
                               Vector::Ones(2));
    const ScaledJacobian s = scaled_jacobian(prob, at_point(prob, x));
    for (Index i = 0; i < 2; ++i) EXPECT_NEAR(s.Js(i, 0), -0.5, 1e-10);
}

TEST(ScaledJacobian, MatchesFiniteDifferenceAtChainMinimum) {
    const UpdatingProblem prob = chain_problem();
    Vector x(2);
    x << 1.0, 1.0;
    const ScaledJacobian s = scaled_jacobian(prob, at_point(prob, x));
    const Matrix fd = prob.targets().cwiseInverse().asDiagonal() * oracle::fd_jacobian(prob.pencil(), x, 2) *
                      x.asDiagonal();
    EXPECT_LE((s.Js - fd).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_THROW(scaled_jacobian(Matrix::Ones(2, 2), x, Vector::Zero(2)), InvalidArgument);
}

TEST(Reliability, ReportIsConsistent) {
    const UpdatingProblem prob = chain_problem();
    Vector x(2);
    x << 1.0, 1.0;
    const ReliabilityReport rep = reliability(prob, at_point(prob, x));
    ASSERT_EQ(rep.params.size(), 2u);
    for (const auto& pr : rep.params) {
        EXPECT_LE(pr.eta, pr.zeta);
        EXPECT_DOUBLE_EQ(pr.inv_zeta, 1.0 / pr.zeta);
        EXPECT_DOUBLE_EQ(pr.inv_eta, 1.0 / pr.eta);
        EXPECT_NEAR(pr.weighted_zeta, pr.zeta, 1e-14);
    }
    EXPECT_EQ(rep.params[0].label, "x1");
    EXPECT_GE(rep.singular_values[0], rep.singular_values[1]);
    EXPECT_GE(rep.singular_values[1], 0.0);
}

TEST(Ellipsoid, IdentityGivesEuclideanBall) {
    const Vector c = Vector::Zero(3);
    const EllipsoidSet e = make_ellipsoid(c, Matrix::Identity(3, 3), Vector::Ones(3), 0.1);
    Vector x(3);
    x << 0.06, 0.08, 0.0;
    EXPECT_NEAR(e.distance(x), 0.1, 1e-15);
    x[2] = 1e-3;
    EXPECT_FALSE(e.contains(x));
    EXPECT_TRUE(e.contains(c));
}

TEST(Ellipsoid, RankOneJacobianIsASlab) {
    Matrix j(2, 2);
    j << 1.0, 2.0, 2.0, 4.0;
    const EllipsoidSet e = make_ellipsoid(Vector::Zero(2), j, Vector::Ones(2), 1e-3);
    EXPECT_NEAR(e.sigma[1], 0.0, 1e-12);
    Vector along(2);
    along << 2.0, -1.0;  // null direction of J
    EXPECT_TRUE(e.contains(1e6 * along));
    EXPECT_FALSE(e.contains(Vector::Constant(2, 1e-3)));
}

TEST(Ellipsoid, DiagonalExample) {
    EllipsoidSet e;
    e.center = Vector::Zero(2);
    e.sigma = Vector(2);
    e.sigma << 2.0, 1.0;
    e.U = Matrix::Identity(2, 2);
    e.coord_scale = Vector::Ones(2);
    e.epsilon = 0.1;
    Vector dx(2);
    dx << 0.04, 0.05;
    EXPECT_NEAR(e.distance(dx), std::hypot(0.08, 0.05), 1e-15);
    EXPECT_NEAR(e.distance(dx), 0.0943, 5e-5);
    EXPECT_TRUE(e.contains(dx));
}

TEST(Ellipsoid, ChainSmallestDirectionAtUnitStiffness) {
    const UpdatingProblem prob = chain_problem();
    Vector x(2);
    x << 1.0, 1.0;
    const MinimumRecord rec = at_point(prob, x);
    const EllipsoidSet e = ellipsoid(prob, rec);
    // The scaled Jacobian at (1,1) is symmetric with equal diagonal, so the weak direction is (1,-1).
    Vector weak = e.U.col(1);
    EXPECT_NEAR(std::abs(weak[0]), std::sqrt(0.5), 1e-9);
    EXPECT_NEAR(weak[0], -weak[1], 1e-9);
    Vector chord(2);
    chord << 1.0, -0.5;
    const double angle = std::acos(std::abs(weak.dot(chord.normalized()))) * 180.0 / std::numbers::pi;
    EXPECT_NEAR(angle, std::atan(1.0 / 3.0) * 180.0 / std::numbers::pi, 1e-6);
    Vector other(2);
    other << 2.0, 0.5;
    EXPECT_GT(e.distance(other), 0.28);
    EXPECT_FALSE(e.contains(other));
}

TEST(Ellipsoid, InvariantUnderStiffnessScaling) {
    const UpdatingProblem p1 = chain_problem(1.0);
    const UpdatingProblem p4 = chain_problem(4.0);
    Vector x1(2), x4(2);
    x1 << 1.0, 1.0;
    x4 << 4.0, 4.0;
    const MinimumRecord r1 = at_point(p1, x1);
    const MinimumRecord r4 = at_point(p4, x4);
    // Same box, targets at 4x stiffness: relative Jacobians differ only through x_hat.
    const ScaledJacobian s1 = scaled_jacobian(p1, r1);
    const ScaledJacobian s4 = scaled_jacobian(p4, r4);
    EXPECT_LE((s1.Js - s4.Js).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ellipsoid, DegradedFallsBackToScaledDistance) {
    const EllipsoidSet e = make_ellipsoid(Vector::Zero(2), Matrix(), Vector::Constant(2, 2.0), 0.1);
    EXPECT_TRUE(e.degraded);
    Vector x(2);
    x << 0.12, 0.16;
    EXPECT_NEAR(e.distance(x), 0.1, 1e-15);
}
