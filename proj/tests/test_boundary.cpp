#include "mil/boundary.hpp"
#include "mil/catalog.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mil;

namespace {

GridField sample(const GridDomain& d, const std::string& id, double amp = 1.0, double offset = 0.0) {
    return Formula{id, amp, offset}.sample(d);
}

double rel_l2(const GridField& a, const GridField& b) {
    const GridDomain& d = a.domain;
    return std::sqrt(d.integrate((a.values - b.values).cwiseAbs2()) / d.integrate(b.values.cwiseAbs2()));
}

LocalCost cost_with_f1(const GridDomain& d, const GridField& f1) {
    return LocalCost(uniform_measure(d).field(), {{0, sample(d, "cospi", 0.2)}, {1, f1}});
}

struct Probes {
    std::vector<MfgTerminal> terminals;
    std::vector<GridField> initials;
};

Probes probe_family(const GridDomain& d) {
    Probes p;
    p.terminals.push_back(LocalCost::zero(d));
    p.terminals.push_back(LocalCost::potential(sample(d, "cospi", 0.3)));
    p.initials.push_back(uniform_measure(d).field());
    GridField m = sample(d, "cospi", 0.5, 1.0);
    m *= 1.0 / m.mass();
    p.initials.push_back(m);
    return p;
}

} // namespace

TEST(NeumannForward, TrivialCase) {
    const GridDomain d = GridDomain::interval(33);
    const MfgSolution s = neumann_mfg_forward(Hamiltonian::quadratic(1.0), LocalCost::zero(d), LocalCost::zero(d),
                                              uniform_measure(d).field(), TimeGrid(0.0, 0.5, 20));
    EXPECT_EQ(s.u.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LE((s.m.array() - 1.0).abs().maxCoeff(), 1e-14);
    const BoundaryTrace t = boundary_trace(s);
    EXPECT_EQ(t.times.size(), 21u);
    for (std::size_t n = 0; n < t.times.size(); ++n) {
        EXPECT_EQ(t.left[n], 0.0);
        EXPECT_EQ(t.right[n], 0.0);
    }
}

TEST(NeumannForward, MassAndResiduals) {
    std::mt19937_64 rng(61);
    const GridDomain d = GridDomain::interval(65);
    const Hamiltonian H = Hamiltonian::quadratic(1.0);
    const LocalCost F = LocalCost::potential(sample(d, "cospi", 0.3));
    const MfgTerminal G = LocalCost::zero(d);
    const MfgSolution s = neumann_mfg_forward(H, F, G, oracle::random_density(d, rng), TimeGrid(0.0, 0.5, 40));
    for (Eigen::Index n = 0; n < s.m.rows(); ++n) EXPECT_NEAR(d.integrate(s.m.row(n).transpose()), 1.0, 1e-12);
    EXPECT_LE(hjb_residual(s, H, F, G), 1e-8);
    EXPECT_LE(fp_residual(s, H), 1e-8);
}

TEST(NeumannForward, TorusRejected) {
    const GridDomain d = GridDomain::torus(32);
    EXPECT_THROW((void)neumann_mfg_forward(Hamiltonian::quadratic(1.0), LocalCost::zero(d), LocalCost::zero(d),
                                           uniform_measure(d).field(), TimeGrid(0.0, 0.5, 10)),
                 Error);
}

TEST(Trace, QuasiStaticTraceHasSlopeMinusGamma) {
    const GridDomain d = GridDomain::interval(33);
    const Hamiltonian H = Hamiltonian::quadratic(1.0);
    const StaticSolution st = static_solve(H, LocalCost::potential(sample(d, "cospi", 0.5)));
    const TimeGrid tg(0.0, 0.5, 10);
    const BoundaryTrace t = boundary_trace(quasi_static_path(st, tg));
    for (std::size_t n = 1; n < t.times.size(); ++n) {
        EXPECT_NEAR((t.left[n] - t.left[n - 1]) / tg.dt(), -st.gamma, 1e-10);
        EXPECT_NEAR((t.right[n] - t.right[n - 1]) / tg.dt(), -st.gamma, 1e-10);
    }
}

TEST(Trace, LengthMismatchRejected) {
    BoundaryTrace a{{0.0, 1.0}, {0.0, 0.0}, {0.0, 0.0}}, b{{0.0}, {0.0}, {0.0}};
    EXPECT_THROW((void)trace_distance(a, b), Error);
}

TEST(Uniqueness, IdenticalCostsAgree) {
    const GridDomain d = GridDomain::interval(33);
    const Probes p = probe_family(d);
    const LocalCost F = cost_with_f1(d, sample(d, "const", 0.0, 1.0));
    const double gap =
        boundary_uniqueness_probe(F, F, Hamiltonian::quadratic(1.0), p.terminals, p.initials, TimeGrid(0.0, 0.5, 20));
    EXPECT_LE(gap, 1e-9);
}

TEST(Uniqueness, PerturbedCostsSeparateLinearly) {
    const GridDomain d = GridDomain::interval(33);
    const Probes p = probe_family(d);
    const TimeGrid tg(0.0, 0.5, 20);
    MfgOptions opt;
    opt.tol = 1e-12;
    const GridField base = sample(d, "const", 0.0, 1.0);
    const LocalCost F1 = cost_with_f1(d, base);
    std::vector<double> gaps;
    for (double eps : {0.05, 0.1, 0.2}) {
        const LocalCost F2 = cost_with_f1(d, base + sample(d, "cospi", eps));
        gaps.push_back(boundary_uniqueness_probe(F1, F2, Hamiltonian::quadratic(1.0), p.terminals, p.initials, tg, opt));
    }
    EXPECT_GE(gaps[1], 1e-5);
    EXPECT_NEAR(gaps[1] / gaps[0], 2.0, 0.2);
    EXPECT_NEAR(gaps[2] / gaps[1], 2.0, 0.2);
}

TEST(Semigroup, LinearAndPerron) {
    std::mt19937_64 rng(62);
    const GridDomain d = GridDomain::interval(65);
    const Formula f{"cospi", 0.3};
    const SemigroupOracle s = make_semigroup_oracle(make_drift(d, f.fn(), f.d1_fn()), 0.1);
    EXPECT_DOUBLE_EQ(s.horizon(), 0.1);
    for (int q = 0; q < 5; ++q)
        EXPECT_LE(linearity_defect(s, oracle::random_direction(d, rng), oracle::random_density(d, rng), 0.7, -1.3), 1e-10);
    EXPECT_EQ(s.calls(), 15u);
}

TEST(Drift, ZeroDriftGivesConstant) {
    const GridDomain d = GridDomain::interval(65);
    const DriftRecovery r = recover_drift(make_semigroup_oracle(zero_drift(d), 0.1), d);
    EXPECT_LE(r.f.values.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(r.f_prime.values.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Drift, RecoversGradientAndPotential) {
    const GridDomain d = GridDomain::interval(128);
    const Formula f{"cospi", 0.3};
    const SemigroupOracle s = make_semigroup_oracle(make_drift(d, f.fn(), f.d1_fn()), 0.1);
    const DriftRecovery r = recover_drift(s, d);
    EXPECT_EQ(s.calls(), d.size());
    EXPECT_LE(rel_l2(r.f_prime, GridField::from_function(d, f.d1_fn())), 1e-2);
    EXPECT_LE(potential_error(r, f.d1_fn(), f.d2_fn()), 1e-4);
    EXPECT_NEAR(r.perron.top_eigenvalue, 1.0, 1e-9);
    EXPECT_GE(r.perron.min_entry, -1e-12);
    EXPECT_LE(r.perron.mass_error, 1e-12);
    EXPECT_GT(r.eigen_gap, 1e-10);
    EXPECT_NEAR(d.integrate(r.f.values), 0.0, 1e-12);
}

TEST(Drift, GaugeInvariance) {
    const GridDomain d = GridDomain::interval(128);
    const Formula f{"cospi", 0.3}, g{"cospi", 0.3, 5.0};
    const DriftRecovery a = recover_drift(make_semigroup_oracle(make_drift(d, f.fn(), f.d1_fn()), 0.1), d);
    const DriftRecovery b = recover_drift(make_semigroup_oracle(make_drift(d, g.fn(), g.d1_fn()), 0.1), d);
    EXPECT_LE((a.f.values - b.f.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Drift, ExactPotentialAndRefinedGradient) {
    // The discrete stationary vector is exactly e^{-f}, so only f' carries a
    // discretization error.
    const Formula f{"cospi", 0.3};
    double prev = 0.0;
    for (std::size_t n : {std::size_t{33}, std::size_t{65}, std::size_t{129}}) {
        const GridDomain d = GridDomain::interval(n);
        const DriftRecovery r = recover_drift(make_semigroup_oracle(make_drift(d, f.fn(), f.d1_fn()), 0.1), d);
        GridField truth = f.sample(d);
        truth.values.array() -= d.integrate(truth.values) / d.weights().sum();
        EXPECT_LE((r.f.values - truth.values).cwiseAbs().maxCoeff(), 1e-9);
        const double err = (r.f_prime.values - GridField::from_function(d, f.d1_fn()).values).cwiseAbs().maxCoeff();
        if (prev > 0.0) EXPECT_GE(std::log2(prev / err), 1.9);
        prev = err;
    }
}

TEST(Drift, InvalidOracles) {
    const GridDomain d = GridDomain::interval(17);
    const GridDomain t = GridDomain::torus(16);
    EXPECT_THROW((void)recover_drift(make_semigroup_oracle(zero_drift(d), 0.1), t), Error);
    const SemigroupOracle negative([](const GridField& g) { return (-1.0) * g; }, 0.1);
    try {
        (void)recover_drift(negative, d);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
    // The identity preserves mass and positivity but eigenvalue 1 is not simple.
    const SemigroupOracle identity([](const GridField& g) { return g; }, 0.1);
    try {
        (void)recover_drift(identity, d);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::spectral_gap_failure);
    }
}
