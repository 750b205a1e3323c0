#include "mil/catalog.hpp"
#include "mil/mfg.hpp"
#include "mil/mfg_inverse.hpp"
#include "mil/mfg_linear.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mil;

namespace {

GridField sample(const GridDomain& d, const std::string& id, double amp = 1.0, double offset = 0.0) {
    return Formula{id, amp, offset}.sample(d);
}

double rel_l2_on(const GridField& a, const GridField& b, const std::vector<bool>& mask) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask[i]) continue;
        num += a.domain.weight(i) * (a[i] - b[i]) * (a[i] - b[i]);
        den += a.domain.weight(i) * b[i] * b[i];
    }
    return std::sqrt(num / den);
}

struct StaticBase {
    GridDomain d;
    Hamiltonian H;
    GridField f0;
    StaticSolution st;

    explicit StaticBase(std::size_t n, double f0_amp = 0.3)
        : d(GridDomain::torus(n)), H(Hamiltonian::quadratic(1.0)), f0(sample(d, "cos1", f0_amp)),
          st(static_solve(H, LocalCost::potential(f0))) {}

    [[nodiscard]] LocalCost cost(const GridField& f1) const { return LocalCost(st.m0.field(), {{0, f0}, {1, f1}}); }
    [[nodiscard]] MfgTerminal terminal() const { return LocalCost::potential(st.u0); }
};

} // namespace

TEST(Forward, TrivialCaseIsExact) {
    const GridDomain d = GridDomain::torus(32);
    const MfgSolution s = mfg_forward(Hamiltonian::quadratic(1.0), LocalCost::zero(d), LocalCost::zero(d),
                                      uniform_measure(d), TimeGrid(0.0, 0.5, 20));
    EXPECT_EQ(s.iterations, 1u);
    EXPECT_EQ(s.u.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LE((s.m.array() - 1.0).abs().maxCoeff(), 1e-14);
}

TEST(Forward, PotentialCostResiduals) {
    std::mt19937_64 rng(51);
    const GridDomain d = GridDomain::torus(64);
    const Hamiltonian H = Hamiltonian::quadratic(1.0);
    const LocalCost F = LocalCost::potential(sample(d, "cos1", 0.1));
    const MfgTerminal G = LocalCost::zero(d);
    const MfgSolution s = mfg_forward(H, F, G, oracle::random_density(d, rng), TimeGrid(0.0, 0.5, 40));
    EXPECT_LE(hjb_residual(s, H, F, G), 1e-8);
    EXPECT_LE(fp_residual(s, H), 1e-8);
    for (Eigen::Index n = 0; n < s.m.rows(); ++n) EXPECT_NEAR(d.integrate(s.m.row(n).transpose()), 1.0, 1e-10);
}

TEST(Forward, CoupledCostResiduals) {
    std::mt19937_64 rng(52);
    const StaticBase s(32);
    const GridDomain& d = s.d;
    const LocalCost F = s.cost(sample(d, "cos1", 0.5, 1.0));
    const MfgTerminal G = LocalCost(uniform_measure(d).field(), {{1, sample(d, "const", 0.0, 0.2)}});
    MfgOptions opt;
    opt.tol = 1e-11;
    const MfgSolution sol = mfg_forward(s.H, F, G, oracle::random_density(d, rng), TimeGrid(0.0, 0.5, 20), opt);
    EXPECT_LE(hjb_residual(sol, s.H, F, G), 1e-8);
    EXPECT_LE(fp_residual(sol, s.H), 1e-8);
    EXPECT_GT(sol.iterations, 1u);
}

TEST(Forward, QuasiStaticSeedIsStationary) {
    const StaticBase s(64);
    const TimeGrid tg(0.0, 0.5, 40);
    const LocalCost F = s.cost(sample(s.d, "cos1"));
    const MfgSolution sol = mfg_forward(s.H, F, s.terminal(), s.st.m0, tg);
    const MfgSolution qs = quasi_static_path(s.st, tg);
    EXPECT_LE((sol.u - qs.u).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE((sol.m - qs.m).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Static, ZeroCostIsTrivial) {
    const GridDomain d = GridDomain::torus(32);
    const StaticSolution st = static_solve(Hamiltonian::quadratic(1.0), LocalCost::zero(d));
    EXPECT_NEAR(st.gamma, 0.0, 1e-14);
    EXPECT_LE(st.u0.values.cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((st.m0.density().array() - 1.0).abs().maxCoeff(), 1e-14);
}

TEST(Static, MatchesHopfCole) {
    for (std::size_t n : {std::size_t{32}, std::size_t{64}}) {
        const StaticBase s(n, 0.8);
        const oracle::HopfCole hc = oracle::hopf_cole_static(s.d, s.f0.values);
        EXPECT_NEAR(s.st.gamma, hc.gamma, 1e-7);
        EXPECT_LE((s.st.u0.values - hc.u).cwiseAbs().maxCoeff(), 1e-7);
        EXPECT_LE((s.st.m0.density() - hc.m).cwiseAbs().maxCoeff(), 1e-7);
        EXPECT_LE(s.st.hjb_residual, 1e-8);
        EXPECT_LE(s.st.fp_residual, 1e-8);
    }
}

TEST(Static, ConstantShiftMovesGammaOnly) {
    const StaticBase a(32);
    const StaticSolution b = static_solve(a.H, LocalCost::potential(a.f0 + sample(a.d, "const", 0.0, 0.7)));
    EXPECT_NEAR(b.gamma - a.st.gamma, 0.7, 1e-9);
    EXPECT_LE((b.u0.values - a.st.u0.values).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((b.m0.density() - a.st.m0.density()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Static, CenteredSchemeAndVariableKappa) {
    const GridDomain d = GridDomain::torus(64);
    const Hamiltonian H = Hamiltonian::quadratic(Formula{"cos1", 0.5, 1.0}.fn(), HamiltonianScheme::centered);
    const StaticSolution st = static_solve(H, LocalCost::potential(sample(d, "sin1", 0.5)));
    EXPECT_LE(st.hjb_residual, 1e-8);
    EXPECT_LE(st.fp_residual, 1e-8);
    EXPECT_NEAR(d.integrate(st.u0.values), 0.0, 1e-12);
    EXPECT_GT(st.m0.density().minCoeff(), 0.0);
}

TEST(Hamiltonian, EllipticityBounds) {
    const auto [lo, hi] = Hamiltonian::quadratic(Formula{"cos1", 0.5, 1.0}.fn()).ellipticity_bounds();
    EXPECT_NEAR(lo, 0.5, 1e-12);
    EXPECT_NEAR(hi, 1.5, 1e-12);
}

TEST(Linearized, ZeroDirectionGivesZero) {
    const StaticBase s(32);
    const LocalCost F = s.cost(sample(s.d, "cos1"));
    const MfgLinearSolution lin = mfg_linearized(s.st, s.H, F, s.terminal(), GridField(s.d), TimeGrid(0.0, 0.5, 20));
    EXPECT_EQ(lin.v.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(lin.rho.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Linearized, DecouplesAroundTrivialBase) {
    const GridDomain d = GridDomain::torus(32);
    const Hamiltonian H = Hamiltonian::quadratic(1.0);
    const StaticSolution st = static_solve(H, LocalCost::zero(d));
    const TimeGrid tg(0.0, 0.5, 40);
    const GridField mu = sample(d, "cos1");
    const MfgLinearSolution lin = mfg_linearized(st, H, LocalCost::zero(d), LocalCost::zero(d), mu, tg);
    EXPECT_LE(lin.v.cwiseAbs().maxCoeff(), 1e-14);
    const EvolutionField heat = fp_solve(zero_drift(d), mu, tg, TimeScheme::crank_nicolson);
    EXPECT_LE((lin.rho - heat.snapshots).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Linearized, QuotientOfForwardSolves) {
    std::mt19937_64 rng(53);
    const StaticBase s(32);
    const TimeGrid tg(0.0, 0.5, 20);
    const LocalCost F = s.cost(sample(s.d, "cos1", 0.5, 1.0));
    const MfgTerminal G = s.terminal();
    MfgOptions opt;
    opt.tol = 1e-12;
    const LinearizedMfg sys(quasi_static_path(s.st, tg), s.H, F, G);
    for (int q = 0; q < 10; ++q) {
        const GridField mu = oracle::random_direction(s.d, rng);
        const MfgLinearSolution lin = sys.solve(mu);
        const double eps = 1e-4;
        const MfgSolution p = mfg_forward(s.H, F, G, s.st.m0.field() + eps * mu, tg, opt);
        const MfgSolution m = mfg_forward(s.H, F, G, s.st.m0.field() + (-eps) * mu, tg, opt);
        const Eigen::VectorXd du = (p.u.row(0) - m.u.row(0)).transpose() / (2 * eps);
        const Eigen::VectorXd dm = (p.m.bottomRows(1) - m.m.bottomRows(1)).transpose() / (2 * eps);
        EXPECT_LE((du - lin.v.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-4);
        EXPECT_LE((dm - lin.rho.bottomRows(1).transpose()).cwiseAbs().maxCoeff(), 1e-4);
        EXPECT_LE(sys.residual(lin, mu), 1e-9);
    }
}

TEST(Energy, IdentityAndMonotoneSign) {
    std::mt19937_64 rng(54);
    const StaticBase s(32);
    const TimeGrid tg(0.0, 0.5, 20);
    const LocalCost F = s.cost(sample(s.d, "cos1", 0.5, 1.0));
    const MfgTerminal G = s.terminal();
    for (int q = 0; q < 5; ++q) {
        const GridField mu = oracle::random_direction(s.d, rng);
        const EnergyIdentity e = energy_identity_check(s.st, s.H, F, mfg_linearized(s.st, s.H, F, G, mu, tg));
        EXPECT_LE(std::abs(e.lhs - e.rhs), 1e-6 * std::max(std::abs(e.lhs), 1.0));
        EXPECT_LE(e.rhs, 1e-10);
    }
    const EnergyIdentity z = energy_identity_check(s.st, s.H, F, mfg_linearized(s.st, s.H, F, G, GridField(s.d), tg));
    EXPECT_EQ(z.lhs, 0.0);
    EXPECT_EQ(z.rhs, 0.0);
}

TEST(QuasiStatic, TrivialBase) {
    const GridDomain d = GridDomain::torus(32);
    const Hamiltonian H = Hamiltonian::quadratic(1.0);
    const StaticSolution st = static_solve(H, LocalCost::zero(d));
    const QuasiStaticLinearized q = quasi_static_linearized(H, LocalCost::zero(d), st);
    EXPECT_NEAR(q.eta, 0.0, 1e-12);
    EXPECT_LE(q.v.values.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((q.rho.values.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(QuasiStatic, ExtensionSolvesTimeDependentSystem) {
    const StaticBase s(32);
    const LocalCost F = s.cost(sample(s.d, "cos1", 0.5, 1.0));
    const QuasiStaticLinearized q = quasi_static_linearized(s.H, F, s.st);
    EXPECT_LE(q.residual, 1e-8);
    EXPECT_NEAR(s.d.integrate(q.rho.values), 1.0, 1e-12);
    EXPECT_GT(q.min_window_max, 0.0);
    EXPECT_LE(quasi_static_extension_residual(q, s.st, s.H, F, s.terminal(), TimeGrid(0.0, 0.5, 20)), 1e-8);
}

TEST(Recovery, FirstOrderCoefficientAndGamma) {
    const StaticBase s(32);
    const TimeGrid tg(0.0, 0.5, 20);
    const GridField f1 = sample(s.d, "cos1");
    MfgOptions fopt;
    fopt.tol = 1e-12;
    const MfgOracle oracle = make_mfg_oracle(s.H, s.cost(f1), s.terminal(), tg, fopt);
    const MfgRecovery rec = recover_mfg_cost(oracle, s.H, s.terminal(), s.st, 1, tg);
    EXPECT_NEAR(rec.gamma, s.st.gamma, 1e-8);
    EXPECT_LE((rec.coefficients.at(0).values - s.f0.values).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(rel_l2_on(rec.coefficients.at(1), f1, rec.support), 5e-2);
    EXPECT_GE(rec.support_fraction, 0.8);
}

TEST(Recovery, ZeroFirstOrderStaysZero) {
    const StaticBase s(32);
    const TimeGrid tg(0.0, 0.5, 20);
    MfgOptions fopt;
    fopt.tol = 1e-12;
    const MfgOracle oracle = make_mfg_oracle(s.H, s.cost(GridField(s.d)), s.terminal(), tg, fopt);
    const MfgRecovery rec = recover_mfg_cost(oracle, s.H, s.terminal(), s.st, 1, tg);
    EXPECT_LE(rec.coefficients.at(1).values.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Recovery, DistinctCoefficientsGiveDistinctData) {
    const StaticBase s(32);
    const TimeGrid tg(0.0, 0.5, 20);
    MfgOptions fopt;
    fopt.tol = 1e-12;
    const GridField f1 = sample(s.d, "cos1");
    const MfgOracle a = make_mfg_oracle(s.H, s.cost(f1), s.terminal(), tg, fopt);
    const MfgOracle b = make_mfg_oracle(s.H, s.cost(f1 + sample(s.d, "const", 0.0, 0.1)), s.terminal(), tg, fopt);
    double gap = 0.0;
    for (const GridField& mu : detail::mfg_probe_directions(s.st.m0, 2)) {
        const MfgData da = detail::measured_first_order(a, s.st.m0.field(), mu, 1e-3);
        const MfgData db = detail::measured_first_order(b, s.st.m0.field(), mu, 1e-3);
        gap = std::max({gap, (da.u_initial.values - db.u_initial.values).cwiseAbs().maxCoeff(),
                        (da.m_final.values - db.m_final.values).cwiseAbs().maxCoeff()});
    }
    EXPECT_GE(gap, 1e-4);
}

TEST(Recovery, SupportDeficiencyAndTerminalMismatch) {
    const StaticBase s(32);
    const TimeGrid tg(0.0, 0.5, 10);
    const MfgOracle oracle = make_mfg_oracle(s.H, s.cost(GridField(s.d)), s.terminal(), tg);
    MfgRecoveryOptions opt;
    opt.support_eps = 2.0;
    try {
        (void)recover_mfg_cost(oracle, s.H, s.terminal(), s.st, 1, tg, opt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::support_deficiency);
    }
    EXPECT_THROW((void)recover_mfg_cost(oracle, s.H, LocalCost::zero(s.d), s.st, 1, tg), Error);
}

TEST(Kappa, ZeroTransportIsMasked) {
    const GridDomain d = GridDomain::torus(32);
    const GridField p = sample(d, "cos1", 1.0, 0.4);
    const KappaRecovery r = recover_kappa(GridField(d), p);
    EXPECT_NEAR(r.lambda, d.integrate(p.values), 1e-12);
    for (bool v : r.valid) EXPECT_FALSE(v);
}

TEST(Kappa, ConstantAndVariable) {
    const GridDomain d = GridDomain::torus(128);
    const GridField p = sample(d, "cos1", 0.5);
    for (const Formula& kf : {Formula{"const", 0.0, 1.0}, Formula{"cos1", 0.5, 1.0}}) {
        const Hamiltonian H = Hamiltonian::quadratic(kf.fn(), HamiltonianScheme::centered);
        const StaticSolution st = static_solve(H, LocalCost::potential(p));
        const KappaRecovery r = recover_kappa(kappa_transport_field(st, kf.fn()), p);
        EXPECT_NEAR(r.lambda, st.gamma, 1e-9);
        double num = 0.0, den = 0.0, worst = 0.0;
        std::size_t valid = 0;
        for (std::size_t e = 0; e < d.edge_count(); ++e) {
            if (!r.valid[e]) continue;
            const double t = kf(d.edge_midpoint(e));
            num += (r.kappa[e] - t) * (r.kappa[e] - t);
            den += t * t;
            worst = std::max(worst, std::abs(r.kappa[e] - t));
            ++valid;
        }
        EXPECT_GT(valid, d.edge_count() / 2);
        if (kf.id == "const") EXPECT_LE(worst, 1e-6);
        else EXPECT_LE(std::sqrt(num / den), 1e-2);
    }
}

TEST(Kappa, IntervalRejected) {
    const GridDomain d = GridDomain::interval(33);
    EXPECT_THROW((void)recover_kappa(GridField(d), GridField(d)), Error);
}
