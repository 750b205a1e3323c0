#include "mil/pdesolve.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mil;

namespace {

DriftPotential cos_drift(const GridDomain& d, double amp = 1.0) {
    return make_drift(d, [amp](double x) { return amp * std::cos(two_pi * x); },
                      [amp](double x) { return -amp * two_pi * std::sin(two_pi * x); });
}

DriftPotential cospi_drift(const GridDomain& d, double amp = 0.3) {
    return make_drift(d, [amp](double x) { return amp * std::cos(std::numbers::pi * x); },
                      [amp](double x) { return -amp * std::numbers::pi * std::sin(std::numbers::pi * x); });
}

double heat_error(std::size_t n, std::size_t steps, double T, TimeScheme scheme) {
    const GridDomain d = GridDomain::torus(n);
    const GridField init = GridField::from_function(d, [](double x) { return std::cos(two_pi * x); });
    const EvolutionField e = fp_solve(zero_drift(d), init, TimeGrid(0.0, T, steps), scheme);
    const double decay = std::exp(-two_pi * two_pi * T);
    return (e.final_snapshot().values - decay * init.values).cwiseAbs().maxCoeff() / decay;
}

} // namespace

class MassConservation : public ::testing::TestWithParam<TimeScheme> {};

TEST_P(MassConservation, ExactOnTorusAndInterval) {
    std::mt19937_64 rng(31);
    for (const GridDomain& d : {GridDomain::torus(64), GridDomain::interval(65)}) {
        const DriftPotential drift = d.periodic() ? cos_drift(d) : cospi_drift(d);
        const GridField init = oracle::random_density(d, rng);
        const EvolutionField e = fp_solve(drift, init, TimeGrid(0.0, 0.5, 50), GetParam());
        for (std::size_t n = 0; n <= 50; ++n) EXPECT_NEAR(e.snapshot(n).mass(), init.mass(), 1e-12);
        EXPECT_NEAR(e.conserved_mass, 1.0, 1e-12);
    }
}

INSTANTIATE_TEST_SUITE_P(Schemes, MassConservation,
                         ::testing::Values(TimeScheme::exponential, TimeScheme::crank_nicolson));

TEST(Stationary, ResidualAtRoundoff) {
    EXPECT_LE(stationary_residual(cos_drift(GridDomain::torus(64))), 1e-10);
    EXPECT_LE(stationary_residual(cos_drift(GridDomain::torus(128), 2.0)), 1e-10);
    EXPECT_LE(stationary_residual(cospi_drift(GridDomain::interval(129))), 1e-10);
}

TEST(Stationary, FixedPointOfTheFlow) {
    const GridDomain d = GridDomain::torus(64);
    const DriftPotential drift = cos_drift(d);
    const GridMeasure m = stationary_measure(drift);
    for (TimeScheme s : {TimeScheme::exponential, TimeScheme::crank_nicolson}) {
        const EvolutionField e = fp_solve(drift, m.field(), TimeGrid(0.0, 1.0, 40), s);
        EXPECT_LE((e.final_snapshot().values - m.density()).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Stationary, ConvergesToEquilibriumFromRandomData) {
    std::mt19937_64 rng(32);
    const GridDomain d = GridDomain::torus(64);
    const DriftPotential drift = cos_drift(d);
    const EvolutionField e = fp_solve(drift, oracle::random_density(d, rng), TimeGrid(0.0, 3.0, 30));
    EXPECT_LE((e.final_snapshot().values - stationary_measure(drift).density()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Heat, ModeErrorAtDeskScale) {
    EXPECT_LE(heat_error(128, 256, 0.1, TimeScheme::crank_nicolson), 1e-3);
    EXPECT_LE(heat_error(128, 256, 0.1, TimeScheme::exponential), 1e-3);
}

TEST(Heat, CrankNicolsonSecondOrder) {
    const double e32 = heat_error(32, 64, 0.1, TimeScheme::crank_nicolson);
    const double e64 = heat_error(64, 128, 0.1, TimeScheme::crank_nicolson);
    const double e128 = heat_error(128, 256, 0.1, TimeScheme::crank_nicolson);
    EXPECT_GE(std::log2(e32 / e64), 1.9);
    EXPECT_GE(std::log2(e64 / e128), 1.9);
}

TEST(Heat, FrozenErrorAtN64) {
    // Spatial error of the exact-in-time propagator: e^{-(lambda_h - 4 pi^2) T} - 1.
    const double h = 1.0 / 64;
    const double lambda_h = 4.0 / (h * h) * std::pow(std::sin(std::numbers::pi * h), 2);
    const double expected = std::abs(std::expm1(-(lambda_h - two_pi * two_pi) * 0.1));
    EXPECT_NEAR(heat_error(64, 10, 0.1, TimeScheme::exponential), expected, 1e-12);
}

TEST(Eigen, ZeroDriftMatchesClosedForm) {
    const std::size_t n = 64;
    const EigenSystem es = fp_eigensystem(zero_drift(GridDomain::torus(n)), 9);
    EXPECT_NEAR(es.lambda[0], 0.0, 1e-10);
    for (std::size_t j = 1; j < 9; ++j) {
        const double k = static_cast<double>((j + 1) / 2);
        const double exact = 4.0 * n * n * std::pow(std::sin(std::numbers::pi * k / n), 2);
        EXPECT_NEAR(es.lambda[j], exact, 1e-9 * exact);
    }
}

TEST(Eigen, PairsAndBiorthonormalDuals) {
    const GridDomain d = GridDomain::torus(64);
    const DriftPotential drift = cos_drift(d);
    const EigenSystem es = fp_eigensystem(drift, 12);
    const TriOperator gen = fp_generator(drift);
    for (std::size_t j = 0; j < es.size(); ++j) {
        const Eigen::VectorXd r = gen.apply(es.E[j].values) + es.lambda[j] * es.E[j].values;
        EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, es.lambda[j]));
        for (std::size_t k = 0; k < es.size(); ++k)
            EXPECT_NEAR(inner(es.E_dual[j], es.E[k]), j == k ? 1.0 : 0.0, 1e-10);
        if (j > 0) EXPECT_GE(es.lambda[j], es.lambda[j - 1]);
    }
    // The ground state is the equilibrium, its dual is constant.
    const Eigen::VectorXd ratio = es.E[0].values.cwiseQuotient(stationary_measure(drift).density());
    EXPECT_LE(ratio.maxCoeff() - ratio.minCoeff(), 1e-10 * ratio.cwiseAbs().maxCoeff());
    EXPECT_LE(es.E_dual[0].values.maxCoeff() - es.E_dual[0].values.minCoeff(), 1e-10 * es.E_dual[0].values.cwiseAbs().maxCoeff());
}

TEST(Eigen, DegenerateBlocksAreDeterministic) {
    const GridDomain d = GridDomain::torus(32);
    const EigenSystem a = fp_eigensystem(zero_drift(d), 5);
    const EigenSystem b = fp_eigensystem(zero_drift(d), 5);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(a.E[j].values, b.E[j].values);
    EXPECT_NEAR(inner(a.E_dual[1], a.E[2]), 0.0, 1e-12);
}

TEST(Eigen, EvolutionIsDiagonal) {
    const GridDomain d = GridDomain::torus(64);
    const DriftPotential drift = cos_drift(d);
    const EigenSystem es = fp_eigensystem(drift, 8);
    const TimeGrid tg(0.0, 0.1, 100);
    for (std::size_t k = 0; k < 8; ++k) {
        const EvolutionField e = fp_solve(drift, es.E[k], tg);
        const double scale = es.E[k].values.cwiseAbs().maxCoeff();
        for (std::size_t n = 0; n <= tg.steps; ++n) {
            const Eigen::VectorXd exact = std::exp(-es.lambda[k] * tg.time(n)) * es.E[k].values;
            EXPECT_LE((e.snapshot(n).values - exact).cwiseAbs().maxCoeff() / scale, 1e-3);
        }
    }
}

TEST(Eigen, InvalidModeCount) {
    EXPECT_THROW((void)fp_eigensystem(zero_drift(GridDomain::torus(32)), 0), Error);
    EXPECT_THROW((void)fp_eigensystem(zero_drift(GridDomain::torus(32)), 33), Error);
}

class Duality : public ::testing::TestWithParam<TimeScheme> {};

TEST_P(Duality, FiftyRandomPairs) {
    std::mt19937_64 rng(33);
    const GridDomain d = GridDomain::torus(64);
    const DriftPotential drift = cos_drift(d, 0.7);
    const TimeGrid tg(0.0, 0.3, 30);
    for (int q = 0; q < 50; ++q) {
        const GridField mu = oracle::random_direction(d, rng) + oracle::random_density(d, rng);
        const GridField psi = oracle::random_direction(d, rng);
        const double forward = inner(psi, fp_solve(drift, mu, tg, GetParam()).final_snapshot());
        const double backward = inner(backward_dual_solve(drift, psi, tg, GetParam()).snapshot(0), mu);
        EXPECT_NEAR(forward, backward, 1e-12 * std::max(1.0, std::abs(forward)));
    }
}

INSTANTIATE_TEST_SUITE_P(Schemes, Duality, ::testing::Values(TimeScheme::exponential, TimeScheme::crank_nicolson));

TEST(Duality, VelocityFieldAdjoint) {
    std::mt19937_64 rng(34);
    const GridDomain d = GridDomain::torus(64);
    const GridField b = GridField::from_function(d, [](double x) { return std::sin(two_pi * x) + 0.3; });
    const TimeGrid tg(0.0, 0.2, 40);
    const TriOperator gen = velocity_generator(b);
    const TriOperator lhs = gen.shifted(1.0, -0.5 * tg.dt()), rhs = gen.shifted(1.0, 0.5 * tg.dt());
    const GridField mu = oracle::random_density(d, rng);
    Eigen::VectorXd m = mu.values;
    for (std::size_t n = 0; n < tg.steps; ++n) m = solve(lhs, rhs.apply(m));
    const GridField psi = oracle::random_direction(d, rng);
    const double forward = d.inner(psi.values, m);
    const double backward = inner(backward_dual_solve(b, psi, tg).snapshot(0), mu);
    EXPECT_NEAR(forward, backward, 1e-12);
    EXPECT_NEAR(d.integrate(m), 1.0, 1e-12);
}

TEST(Neumann, IncompatibleDriftRejected) {
    const GridDomain d = GridDomain::interval(33);
    try {
        (void)make_drift(d, [](double x) { return x; }, [](double) { return 1.0; });
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
}

TEST(Neumann, SolutionOperatorIsMarkov) {
    const GridDomain d = GridDomain::interval(65);
    const Eigen::MatrixXd p = neumann_solution_operator(cospi_drift(d), 0.1);
    EXPECT_GE(p.minCoeff(), -1e-12);
    EXPECT_LE((d.weights().transpose() * p - d.weights().transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const GridMeasure m = stationary_measure(cospi_drift(d));
    EXPECT_LE((p * m.density() - m.density()).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(TimeGridTest, RejectsBadIntervals) {
    EXPECT_THROW(TimeGrid(0.5, 0.5, 10), Error);
    EXPECT_THROW(TimeGrid(0.0, 1.0, 0), Error);
    const TimeGrid tg(0.0, 1.0, 4);
    double s = 0.0;
    for (double w : tg.trapezoid_weights()) s += w;
    EXPECT_DOUBLE_EQ(s, 1.0);
}
