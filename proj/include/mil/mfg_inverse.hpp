#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/linalg.hpp"
#include "mil/mfg.hpp"
#include "mil/mfg_linear.hpp"
#include "mil/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace mil {

/// Time-boundary data (u(0, .), m(T, .)) of one forward solve.
struct MfgData {
    GridField u_initial;
    GridField m_final;
};

/// Measurement map m0 -> (u(0), m(T)) with a call counter.
class MfgOracle {
public:
    explicit MfgOracle(std::function<MfgData(const GridField&)> query)
        : query_(std::move(query)), calls_(std::make_shared<std::atomic<std::size_t>>(0)) {}

    MfgData operator()(const GridField& m0) const {
        calls_->fetch_add(1);
        return query_(m0);
    }
    [[nodiscard]] std::size_t calls() const { return calls_->load(); }

private:
    std::function<MfgData(const GridField&)> query_;
    std::shared_ptr<std::atomic<std::size_t>> calls_;
};

inline MfgOracle make_mfg_oracle(Hamiltonian H, LocalCost F, MfgTerminal G, TimeGrid tg, MfgOptions opt = {}) {
    return MfgOracle([H = std::move(H), F = std::move(F), G = std::move(G), tg, opt](const GridField& m0) {
        const MfgSolution s = mfg_forward(H, F, G, m0, tg, opt);
        return MfgData{s.u_at(0), s.m_at(tg.steps)};
    });
}

struct MfgRecoveryOptions {
    /// Probe directions m0 cos(2 pi k x), m0 sin(2 pi k x) for k = 1..frequencies.
    std::size_t frequencies = 2;
    double step = 1e-3;
    double support_eps = 1e-6;
    double min_coverage = 0.8;
    double pinv_threshold = 1e-10;
    double max_condition = 1e14;
    std::size_t gauss_newton_iter = 12;
    double gauss_newton_tol = 1e-9;
    std::size_t threads = 1;
};

struct MfgRecovery {
    int order = 0;
    double gamma = 0.0;
    std::map<int, GridField> coefficients;
    std::vector<bool> support;
    double support_fraction = 0.0;
    double condition_number = 0.0;
    std::size_t gauss_newton_iterations = 0;
    double data_misfit = 0.0;
};

namespace detail {

inline std::vector<GridField> mfg_probe_directions(const GridMeasure& m0, std::size_t freqs) {
    const GridDomain& d = m0.domain();
    std::vector<GridField> out;
    const double period = d.periodic() ? 1.0 : 2.0;
    for (std::size_t k = 1; k <= freqs; ++k) {
        for (int kind = 0; kind < (d.periodic() ? 2 : 1); ++kind) {
            GridField g = GridField::from_function(d, [&](double x) {
                const double a = two_pi * static_cast<double>(k) * x / period;
                return kind == 0 ? std::cos(a) : std::sin(a);
            });
            g.values = g.values.cwiseProduct(m0.density());
            g.values -= g.mass() * m0.density();
            out.push_back(std::move(g));
        }
    }
    return out;
}

/// Richardson-extrapolated central quotient of the oracle data along mu.
inline MfgData measured_first_order(const MfgOracle& oracle, const GridField& m0, const GridField& mu, double s) {
    auto quotient = [&](double step) {
        const MfgData p = oracle(m0 + step * mu), q = oracle(m0 - step * mu);
        return MfgData{(1.0 / (2 * step)) * (p.u_initial - q.u_initial), (1.0 / (2 * step)) * (p.m_final - q.m_final)};
    };
    const MfgData a = quotient(s), b = quotient(0.5 * s);
    return {(1.0 / 3.0) * (4.0 * b.u_initial - a.u_initial), (1.0 / 3.0) * (4.0 * b.m_final - a.m_final)};
}

/// Least-squares step by truncated pseudo-inverse; returns (step, condition).
inline std::pair<Eigen::VectorXd, double> truncated_lstsq(const Eigen::MatrixXd& j, const Eigen::VectorXd& r,
                                                          double threshold) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(j, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double smax = s.size() > 0 ? s[0] : 0.0;
    require(smax > 0.0, ErrorKind::ill_conditioned, "probe Jacobian is identically zero");
    Eigen::VectorXd coeff = svd.matrixU().transpose() * r;
    for (Eigen::Index i = 0; i < s.size(); ++i) coeff[i] = s[i] > threshold * smax ? coeff[i] / s[i] : 0.0;
    const double cond = s[s.size() - 1] > 0 ? smax / s[s.size() - 1] : INFINITY;
    return {svd.matrixV() * coeff, cond};
}

} // namespace detail

/// Recovers the local cost coefficients F^(k), k <= kmax, around a known
/// static solution from time-boundary data. The terminal cost must equal the
/// static value u0 at m0 so that the base is quasi-static.
inline MfgRecovery recover_mfg_cost(const MfgOracle& oracle, const Hamiltonian& H, const MfgTerminal& G,
                                    const StaticSolution& base, int kmax, const TimeGrid& tg,
                                    const MfgRecoveryOptions& opt = {}) {
    const GridDomain& d = base.u0.domain;
    const std::size_t n = d.size();
    const Eigen::Index ni = static_cast<Eigen::Index>(n);
    const GridField& m0 = base.m0.field();
    require((G.value(m0.values) - base.u0.values).cwiseAbs().maxCoeff() <= 1e-8, ErrorKind::invalid_argument,
            "terminal cost must equal the static value u0 at m0");
    const double horizon = tg.T - tg.t0;
    MfgRecovery out;
    out.order = kmax;

    // Order 0: gamma from the unperturbed probe, F0 from the static equation.
    const MfgData flat = oracle(m0);
    out.gamma = d.integrate(flat.u_initial.values - base.u0.values) / (d.integrate(Eigen::VectorXd::Ones(ni)) * horizon);
    const Eigen::VectorXd f0 = Eigen::VectorXd::Constant(ni, out.gamma) - laplacian(d).apply(base.u0.values) +
                               node_hamiltonian(d, H, base.u0.values);
    out.coefficients.emplace(0, GridField(d, f0));
    if (kmax == 0) return out;

    const std::vector<GridField> probes = detail::mfg_probe_directions(base.m0, opt.frequencies);
    const std::size_t np = probes.size();
    std::vector<MfgData> data(np, MfgData{GridField(d), GridField(d)});
    parallel_for(np, opt.threads, [&](std::size_t j) { data[j] = detail::measured_first_order(oracle, m0, probes[j], opt.step); });

    const MfgSolution path = quasi_static_path(base, tg);
    const Eigen::VectorXd& w = d.weights();
    const Eigen::VectorXd sw = w.cwiseSqrt();
    const Eigen::Index rows = 2 * ni * static_cast<Eigen::Index>(np);
    Eigen::VectorXd measured(rows);
    for (std::size_t j = 0; j < np; ++j) {
        measured.segment(static_cast<Eigen::Index>(2 * j) * ni, ni) = sw.cwiseProduct(data[j].u_initial.values);
        measured.segment(static_cast<Eigen::Index>(2 * j + 1) * ni, ni) = sw.cwiseProduct(data[j].m_final.values);
    }

    Eigen::VectorXd f1 = Eigen::VectorXd::Zero(ni);
    auto cost_with = [&](const Eigen::VectorXd& c1) {
        return LocalCost(m0, {{0, GridField(d, f0)}, {1, GridField(d, c1)}});
    };

    // Support from the zero-coupling linearized densities.
    {
        const LinearizedMfg sys(path, H, cost_with(f1), G);
        Eigen::VectorXd peak = Eigen::VectorXd::Zero(ni);
        for (const auto& mu : probes) peak = peak.cwiseMax(sys.solve(mu).rho.cwiseAbs().colwise().maxCoeff().transpose());
        const double eps = opt.support_eps * peak.maxCoeff();
        out.support.resize(n);
        std::size_t covered = 0;
        for (std::size_t i = 0; i < n; ++i) {
            out.support[i] = peak[static_cast<Eigen::Index>(i)] > eps;
            covered += out.support[i] ? 1 : 0;
        }
        out.support_fraction = static_cast<double>(covered) / static_cast<double>(n);
        require(out.support_fraction >= opt.min_coverage, ErrorKind::support_deficiency,
                "probe densities vanish on " + std::to_string(100.0 * (1.0 - out.support_fraction)) + "% of cells");
    }
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < n; ++i)
        if (out.support[i]) cells.push_back(i);
    const Eigen::Index nc = static_cast<Eigen::Index>(cells.size());

    // Gauss-Newton on F^(1): the data depend on F^(1) through the product F^(1) rho.
    for (std::size_t it = 0; it < opt.gauss_newton_iter; ++it) {
        const LinearizedMfg sys(path, H, cost_with(f1), G);
        Eigen::VectorXd predicted(rows);
        Eigen::MatrixXd jac(rows, nc);
        std::vector<MfgLinearSolution> sols(np, MfgLinearSolution{tg, d, {}, {}});
        for (std::size_t j = 0; j < np; ++j) sols[j] = sys.solve(probes[j]);
        for (std::size_t j = 0; j < np; ++j) {
            predicted.segment(static_cast<Eigen::Index>(2 * j) * ni, ni) = sw.cwiseProduct(sols[j].v.row(0).transpose());
            predicted.segment(static_cast<Eigen::Index>(2 * j + 1) * ni, ni) =
                sw.cwiseProduct(sols[j].rho.row(static_cast<Eigen::Index>(tg.steps)).transpose());
        }
        const GridField zero(d);
        parallel_for(static_cast<std::size_t>(nc) * np, opt.threads, [&](std::size_t q) {
            const std::size_t c = q / np, j = q % np;
            const std::size_t cell = cells[c];
            const Eigen::Index ci = static_cast<Eigen::Index>(cell);
            LinearSources src;
            src.hjb = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tg.steps), ni);
            for (std::size_t t = 0; t < tg.steps; ++t)
                src.hjb(static_cast<Eigen::Index>(t), ci) =
                    0.5 * (sols[j].rho(static_cast<Eigen::Index>(t), ci) + sols[j].rho(static_cast<Eigen::Index>(t + 1), ci));
            const MfgLinearSolution ds = sys.solve(zero, src);
            jac.block(static_cast<Eigen::Index>(2 * j) * ni, static_cast<Eigen::Index>(c), ni, 1) =
                sw.cwiseProduct(ds.v.row(0).transpose());
            jac.block(static_cast<Eigen::Index>(2 * j + 1) * ni, static_cast<Eigen::Index>(c), ni, 1) =
                sw.cwiseProduct(ds.rho.row(static_cast<Eigen::Index>(tg.steps)).transpose());
        });
        const Eigen::VectorXd r = measured - predicted;
        out.data_misfit = r.norm();
        const auto [delta, cond] = detail::truncated_lstsq(jac, r, opt.pinv_threshold);
        out.condition_number = cond;
        require(cond <= opt.max_condition, ErrorKind::ill_conditioned,
                "probe Jacobian condition number " + std::to_string(cond));
        for (Eigen::Index c = 0; c < nc; ++c) f1[static_cast<Eigen::Index>(cells[static_cast<std::size_t>(c)])] += delta[c];
        out.gauss_newton_iterations = it + 1;
        if (delta.cwiseAbs().maxCoeff() <= opt.gauss_newton_tol * std::max(1.0, f1.cwiseAbs().maxCoeff())) break;
    }
    out.coefficients.emplace(1, GridField(d, f1));

    // Orders k >= 2: the k-th directional quotient of the data is affine in
    // F^(k) once lower orders are fixed; fit it column by column against the
    // forward solver under the candidate cost.
    for (int k = 2; k <= kmax; ++k) {
        const double s = 2e-2;
        auto kth_quotient = [&](auto&& forward, const GridField& mu) {
            // Central k-th difference of u(0) and m(T) along mu.
            Eigen::VectorXd du = Eigen::VectorXd::Zero(ni), dm = Eigen::VectorXd::Zero(ni);
            for (int j = 0; j <= k; ++j) {
                double binom = 1.0;
                for (int q = 1; q <= j; ++q) binom = binom * (k - q + 1) / q;
                const double sign = ((k - j) % 2 == 0) ? 1.0 : -1.0;
                const MfgData p = forward(m0 + (s * (j - 0.5 * k)) * mu);
                du += sign * binom * p.u_initial.values;
                dm += sign * binom * p.m_final.values;
            }
            const double scale = std::pow(s, k);
            return std::pair<Eigen::VectorXd, Eigen::VectorXd>{du / scale, dm / scale};
        };
        std::map<int, GridField> known = out.coefficients;
        auto candidate = [&](const Eigen::VectorXd& ck) {
            std::map<int, GridField> c = known;
            c.insert_or_assign(k, GridField(d, ck));
            const LocalCost fc(m0, c);
            return [&H, &G, &tg, fc](const GridField& start) {
                MfgOptions o;
                o.tol = 1e-12;
                const MfgSolution sol = mfg_forward(H, fc, G, start, tg, o);
                return MfgData{sol.u_at(0), sol.m_at(tg.steps)};
            };
        };
        Eigen::VectorXd meas(rows), offset(rows);
        Eigen::MatrixXd a(rows, nc);
        for (std::size_t j = 0; j < np; ++j) {
            const auto [mu_u, mu_m] = kth_quotient([&](const GridField& x) { return oracle(x); }, probes[j]);
            meas.segment(static_cast<Eigen::Index>(2 * j) * ni, ni) = sw.cwiseProduct(mu_u);
            meas.segment(static_cast<Eigen::Index>(2 * j + 1) * ni, ni) = sw.cwiseProduct(mu_m);
            const auto [o_u, o_m] = kth_quotient(candidate(Eigen::VectorXd::Zero(ni)), probes[j]);
            offset.segment(static_cast<Eigen::Index>(2 * j) * ni, ni) = sw.cwiseProduct(o_u);
            offset.segment(static_cast<Eigen::Index>(2 * j + 1) * ni, ni) = sw.cwiseProduct(o_m);
        }
        parallel_for(static_cast<std::size_t>(nc) * np, opt.threads, [&](std::size_t q) {
            const std::size_t c = q / np, j = q % np;
            Eigen::VectorXd e = Eigen::VectorXd::Zero(ni);
            e[static_cast<Eigen::Index>(cells[c])] = 1.0;
            const auto [cu, cm] = kth_quotient(candidate(e), probes[j]);
            a.block(static_cast<Eigen::Index>(2 * j) * ni, static_cast<Eigen::Index>(c), ni, 1) =
                sw.cwiseProduct(cu) - offset.segment(static_cast<Eigen::Index>(2 * j) * ni, ni);
            a.block(static_cast<Eigen::Index>(2 * j + 1) * ni, static_cast<Eigen::Index>(c), ni, 1) =
                sw.cwiseProduct(cm) - offset.segment(static_cast<Eigen::Index>(2 * j + 1) * ni, ni);
        });
        const auto [coef, cond] = detail::truncated_lstsq(a, meas - offset, opt.pinv_threshold);
        out.condition_number = std::max(out.condition_number, cond);
        Eigen::VectorXd fk = Eigen::VectorXd::Zero(ni);
        for (Eigen::Index c = 0; c < nc; ++c) fk[static_cast<Eigen::Index>(cells[static_cast<std::size_t>(c)])] = coef[c];
        out.coefficients.emplace(k, GridField(d, fk));
    }
    return out;
}

struct KappaRecovery {
    double lambda = 0.0;
    GridField omega;
    /// Edge values, entry e at the midpoint of edge e.
    GridField kappa;
    std::vector<bool> valid;
};

/// Solves lambda - Lap omega + q . grad omega = p with int omega = 0, where
/// the transport term at node i averages q_e (grad omega)_e over the two
/// adjacent edges, then returns kappa_e = 2 q_e / (grad omega)_e on edges with
/// |grad omega| > threshold * max |grad omega|.
inline KappaRecovery recover_kappa(const GridField& qvec, const GridField& p, double threshold = 0.1) {
    const GridDomain& d = p.domain;
    require(d.periodic(), ErrorKind::invalid_argument, "kappa recovery needs the torus");
    require_same_domain(d, qvec.domain);
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    // Transport operator T omega = sum over adjacent edges (h/2) q_e g_e / w.
    TriOperator t(d);
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        const auto li = static_cast<Eigen::Index>(l), ri = static_cast<Eigen::Index>(r);
        const double a = 0.5 * qvec[e];
        t.upper[li] += a / d.weight(l);
        t.diag[li] -= a / d.weight(l);
        t.diag[ri] += a / d.weight(r);
        t.lower[ri] -= a / d.weight(r);
    }
    TriOperator op = laplacian(d).shifted(0.0, -1.0);
    op += t;
    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + 1, n + 1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    sys.block(0, 0, n, 1).setOnes();
    sys.block(0, 1, n, n) = op.dense();
    sys.block(n, 1, 1, n) = d.weights().transpose();
    rhs.head(n) = p.values;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(sys);
    require(lu.isInvertible(), ErrorKind::singular_poisson, "gauged transport-Poisson system is singular");
    const Eigen::VectorXd x = lu.solve(rhs);
    KappaRecovery out{x[0], GridField(d, x.tail(n)), GridField(d), std::vector<bool>(d.size(), false)};
    const Eigen::VectorXd g = edge_gradient(d, out.omega.values);
    const double gmax = g.cwiseAbs().maxCoeff();
    // Without transport there is nothing to divide: every edge stays masked.
    const bool degenerate = qvec.values.cwiseAbs().maxCoeff() == 0.0;
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const double ge = g[static_cast<Eigen::Index>(e)];
        if (!degenerate && gmax > 0.0 && std::abs(ge) > threshold * gmax) {
            out.valid[e] = true;
            out.kappa[e] = 2.0 * qvec[e] / ge;
        }
    }
    return out;
}

/// Edge field q_e = kappa_e (grad u0)_e / 2 of a static solution.
inline GridField kappa_transport_field(const StaticSolution& s, const std::function<double(double)>& kappa) {
    const GridDomain& d = s.u0.domain;
    const Eigen::VectorXd g = edge_gradient(d, s.u0.values);
    GridField q(d);
    for (std::size_t e = 0; e < d.edge_count(); ++e) q[e] = 0.5 * kappa(d.edge_midpoint(e)) * g[static_cast<Eigen::Index>(e)];
    return q;
}

} // namespace mil
