#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "modupdate/eig.hpp"
#include "oracles.hpp"

using namespace modupdate;

namespace {

AffinePencil two_dof_chain() {
    const std::vector<double> masses{1.0, 1.0};
    return build_spring_chain(2, masses, {{0}, {1}});
}

AffinePencil chain20(int groups) {
    const std::vector<double> masses(20, 1.0);
    std::vector<std::vector<Index>> g(static_cast<std::size_t>(groups));
    for (Index s = 0; s < 20; ++s) g[static_cast<std::size_t>(s * groups / 20)].push_back(s);
    return build_spring_chain(20, masses, g);
}

/// K(x) = x K0 (or M(x) = x M0 when `mass`) with a fixed 3-DOF chain shape.
AffinePencil single_parameter(bool mass) {
    const std::vector<double> masses{1.0, 2.0, 1.5};
    const AffinePencil chain = build_spring_chain(3, masses, {{0, 1, 2}});
    const SparseMatrix k = SparseMatrix(chain.component(Part::Stiffness, 0));
    const SparseMatrix m = SparseMatrix(chain.component(Part::Mass, -1));
    const SparseMatrix zero(3, 3);
    if (mass) return AffinePencil::from_components(k, zero, {zero}, {m});
    return AffinePencil::from_components(zero, m, {k}, {zero});
}

Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<Index>(v.size()));
    Index i = 0;
    for (double d : v) x[i++] = d;
    return x;
}

}  // namespace

TEST(SolveModes, TwoDofChain) {
    const ModalSolution s = solve_modes(two_dof_chain(), vec({1.0, 1.0}), 2);
    EXPECT_NEAR(s.lambdas[0], 0.381966, 1e-6);
    EXPECT_NEAR(s.lambdas[1], 2.618034, 1e-6);
    EXPECT_NEAR(s.freqs[0], 0.0983632, 1e-7);
    EXPECT_NEAR(s.freqs[1], 0.2575181, 1e-7);
    const auto [l1, l2] = oracle::eig2(2.0, -1.0, 1.0);
    EXPECT_NEAR(s.lambdas[0], l1, 1e-14);
    EXPECT_NEAR(s.lambdas[1], l2, 1e-14);
}

TEST(SolveModes, SingleOscillatorFrequency) {
    const std::vector<double> masses{1.0};
    const ModalSolution s = solve_modes(build_spring_chain(1, masses, {{0}}), vec({1.0}), 1);
    EXPECT_NEAR(s.freqs[0], 1.0 / (2.0 * std::numbers::pi), 1e-15);
}

TEST(SolveModes, SecondChainPointHasSameSpectrum) {
    const ModalSolution a = solve_modes(two_dof_chain(), vec({1.0, 1.0}), 2);
    const ModalSolution b = solve_modes(two_dof_chain(), vec({2.0, 0.5}), 2);
    EXPECT_NEAR(a.lambdas[0], b.lambdas[0], 1e-14);
    EXPECT_NEAR(a.lambdas[1], b.lambdas[1], 1e-14);
}

TEST(SolveModes, ModesAreMOrthonormalWithSmallResiduals) {
    std::vector<BeamSegment> segs{{3.0, 0, 2, 1.0, 1.0, 10}, {2.0, 1, 2, 0.4, 0.7, 10}};
    const AffinePencil beam = build_cantilever_beam(segs, 3);
    const Vector x = vec({2.0, 1.0, 0.8});
    const ModalSolution s = solve_modes(beam, x, 8);
    const Matrix g = s.modes.transpose() * (beam.mass(x) * s.modes);
    EXPECT_LE((g - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(s.residuals.maxCoeff(), 1e-9);
    for (Index i = 1; i < 8; ++i) EXPECT_GT(s.lambdas[i], s.lambdas[i - 1]);
    EXPECT_GT(s.lambdas[0], 0.0);
    const Vector ref = oracle::dense_lambdas(beam, x);
    for (Index i = 0; i < 8; ++i) EXPECT_NEAR(s.lambdas[i], ref[i], 1e-9 * ref[i]);
}

TEST(SolveModes, RandomPencilsMatchDenseSolve) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 8; ++trial) {
        const Index n = 40 + 37 * trial;
        const SparseMatrix k = oracle::random_spd(n, rng, 3, 0.05);
        const SparseMatrix m = oracle::random_spd(n, rng, 1, 1.0);
        const AffinePencil pencil = AffinePencil::from_components(k, m, {}, {});
        const Index q = 1 + trial % 6;
        SolverOptions opts;
        opts.cross_check = false;
        const ModalSolution s = solve_modes(pencil, Vector(0), q, opts);
        const Vector ref = oracle::dense_lambdas(pencil, Vector(0));
        for (Index i = 0; i < q; ++i) EXPECT_NEAR(s.lambdas[i], ref[i], 1e-9 * ref[i]) << "n=" << n;
    }
}

TEST(SolveModes, RestartsOnLargeChainWithSmallSubspace) {
    const Index n = 1500;
    const std::vector<double> masses(static_cast<std::size_t>(n), 1.0);
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    const AffinePencil chain = build_spring_chain(n, masses, {all});
    SolverOptions opts;
    opts.subspace = 12;
    const ModalSolution s = solve_modes(chain, vec({1.0}), 5, opts);
    EXPECT_LE(s.residuals.maxCoeff(), 1e-9);
    // Fixed-free chain: lambda_k = 4 sin^2((2k - 1) pi / (2 (2n + 1)))
    for (Index k = 1; k <= 5; ++k) {
        const double exact = 4.0 * std::pow(std::sin((2.0 * k - 1.0) * std::numbers::pi / (2.0 * (2.0 * n + 1.0))), 2);
        EXPECT_NEAR(s.lambdas[k - 1], exact, 1e-9 * exact);
    }
}

TEST(SolveModes, ScaleEquivariance) {
    const AffinePencil base = chain20(3);
    const double c = 4.0;
    std::vector<SparseMatrix> kc, mc;
    for (Index j = 0; j < 3; ++j) {
        kc.push_back(c * SparseMatrix(base.component(Part::Stiffness, j)));
        mc.push_back(SparseMatrix(base.component(Part::Mass, j)));
    }
    const AffinePencil scaled = AffinePencil::from_components(
        c * SparseMatrix(base.component(Part::Stiffness, -1)), SparseMatrix(base.component(Part::Mass, -1)), kc, mc);
    const Vector x = vec({1.3, 0.7, 2.1});
    const ModalSolution a = solve_modes(base, x, 6);
    const ModalSolution b = solve_modes(scaled, x, 6);
    for (Index i = 0; i < 6; ++i) {
        EXPECT_NEAR(b.lambdas[i], c * a.lambdas[i], 1e-12 * b.lambdas[i]);
        EXPECT_NEAR(b.freqs[i], std::sqrt(c) * a.freqs[i], 1e-12 * b.freqs[i]);
    }
}

TEST(SolveModes, InfeasiblePointIsSignalled) {
    EXPECT_THROW(solve_modes(two_dof_chain(), vec({-1.0, 1.0}), 2), InfeasibleError);
    EXPECT_THROW(solve_modes(two_dof_chain(), vec({1.0, 1.0}), 3), InvalidArgument);
    const AffinePencil massy = single_parameter(true);
    EXPECT_THROW(solve_modes(massy, vec({0.0}), 1), InfeasibleError);
}

TEST(FreqJacobian, StiffnessScalingDerivative) {
    const AffinePencil pencil = single_parameter(false);
    const double x = 2.5;
    const ModalSolution s = solve_modes(pencil, vec({x}), 3);
    const FreqJacobian J = freq_jacobian(pencil, s);
    ASSERT_TRUE(J.valid);
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(J.J(i, 0), s.freqs[i] / (2.0 * x), 1e-12 * s.freqs[i]);
}

TEST(FreqJacobian, MassScalingDerivative) {
    const AffinePencil pencil = single_parameter(true);
    const double x = 0.6;
    const ModalSolution s = solve_modes(pencil, vec({x}), 3);
    const FreqJacobian J = freq_jacobian(pencil, s);
    ASSERT_TRUE(J.valid);
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(J.J(i, 0), -s.freqs[i] / (2.0 * x), 1e-12 * s.freqs[i]);
}

TEST(FreqJacobian, MatchesFiniteDifferencesOnTwentyDofChain) {
    const AffinePencil pencil = chain20(4);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
        Vector x(4);
        for (Index j = 0; j < 4; ++j) x[j] = u(rng);
        const ModalSolution s = solve_modes(pencil, x, 6);
        const FreqJacobian J = freq_jacobian(pencil, s);
        ASSERT_TRUE(J.valid);
        const Matrix fd = oracle::fd_jacobian(pencil, x, 6);
        for (Index i = 0; i < 6; ++i)
            for (Index j = 0; j < 4; ++j)
                EXPECT_NEAR(J.J(i, j), fd(i, j), 1e-5 * J.J.row(i).cwiseAbs().maxCoeff());
    }
}

TEST(FreqJacobian, RepeatedEigenvalueFallsBackToFiniteDifferences) {
    // Two identical uncoupled oscillators: lambda_1 == lambda_2 at x = (1, 1).
    SparseMatrix k1(2, 2), k2(2, 2), m(2, 2), zero(2, 2);
    k1.insert(0, 0) = 1.0;
    k2.insert(1, 1) = 1.0;
    m.setIdentity();
    const AffinePencil pencil = AffinePencil::from_components(zero, m, {k1, k2}, {zero, zero});
    const ModalSolution s = solve_modes(pencil, vec({1.0, 1.0}), 2);
    EXPECT_FALSE(s.gap_ok[0]);
    EXPECT_FALSE(freq_jacobian(pencil, s).valid);
    long evals = 0;
    const Matrix J = frequency_jacobian(pencil, s, {}, nullptr, &evals);
    EXPECT_EQ(evals, 4);
    EXPECT_TRUE(J.allFinite());

    const ModalSolution t = solve_modes(pencil, vec({1.0, 2.0}), 2);
    EXPECT_TRUE(t.gap_ok[0] && t.gap_ok[1]);
}
