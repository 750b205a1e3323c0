#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/linalg.hpp"
#include "mil/pdesolve.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mil {

enum class HamiltonianScheme {
    /// Both half-edges use H(x_e, g_e).
    centered,
    /// Exponential-fitted split of the quadratic Hamiltonian; the discrete
    /// Hopf-Cole transform is exact for it.
    exponential,
};

/// One-sided contributions of edge e to its left and right node, with first
/// and second derivatives in the edge gradient g.
struct EdgeTerms {
    double hl = 0, hr = 0;
    double dl = 0, dr = 0;
    double ddl = 0, ddr = 0;
};

struct Hamiltonian {
    std::function<double(double, double)> H;
    std::function<double(double, double)> H_p;
    std::function<double(double, double)> H_pp;
    /// Set for the quadratic form H = kappa(x) p^2 / 2.
    std::function<double(double)> kappa;
    HamiltonianScheme scheme = HamiltonianScheme::centered;

    static Hamiltonian quadratic(std::function<double(double)> kappa,
                                 HamiltonianScheme scheme = HamiltonianScheme::exponential) {
        Hamiltonian out;
        out.H = [kappa](double x, double p) { return 0.5 * kappa(x) * p * p; };
        out.H_p = [kappa](double x, double p) { return kappa(x) * p; };
        out.H_pp = [kappa](double x, double) { return kappa(x); };
        out.kappa = std::move(kappa);
        out.scheme = scheme;
        return out;
    }
    static Hamiltonian quadratic(double kappa = 1.0, HamiltonianScheme scheme = HamiltonianScheme::exponential) {
        return quadratic([kappa](double) { return kappa; }, scheme);
    }
    static Hamiltonian general(std::function<double(double, double)> h, std::function<double(double, double)> hp,
                               std::function<double(double, double)> hpp) {
        Hamiltonian out;
        out.H = std::move(h);
        out.H_p = std::move(hp);
        out.H_pp = std::move(hpp);
        return out;
    }

    [[nodiscard]] bool is_quadratic() const { return static_cast<bool>(kappa); }

    [[nodiscard]] EdgeTerms edge(double x, double g, double h) const {
        EdgeTerms t;
        if (scheme == HamiltonianScheme::centered) {
            t.hl = t.hr = H(x, g);
            t.dl = t.dr = H_p(x, g);
            t.ddl = t.ddr = H_pp(x, g);
            return t;
        }
        require(is_quadratic(), ErrorKind::invalid_argument, "exponential scheme needs the quadratic form");
        const double k = kappa(x);
        const double a = 0.5 * k * h * g;
        const double c = 4.0 / (k * h * h);
        // e^{s} - 1 - s with a series near zero.
        auto phi = [](double s) {
            if (std::abs(s) < 1e-3) return s * s * (0.5 + s * (1.0 / 6 + s * (1.0 / 24 + s * (1.0 / 120 + s / 720))));
            return std::expm1(s) - s;
        };
        t.hl = c * phi(-a);
        t.hr = c * phi(a);
        t.dl = -(2.0 / h) * std::expm1(-a);
        t.dr = (2.0 / h) * std::expm1(a);
        t.ddl = k * std::exp(-a);
        t.ddr = k * std::exp(a);
        return t;
    }

    /// Smallest and largest H_pp over a sample of (x, p).
    [[nodiscard]] std::pair<double, double> ellipticity_bounds(double pmax = 10.0, int samples = 41) const {
        double lo = INFINITY, hi = -INFINITY;
        for (int i = 0; i < samples; ++i)
            for (int j = 0; j < samples; ++j) {
                const double x = static_cast<double>(i) / (samples - 1);
                const double p = -pmax + 2.0 * pmax * j / (samples - 1);
                const double v = H_pp(x, p);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        return {lo, hi};
    }
};

/// Local cost F(x, m) = sum_k F^(k)(x) (m(x) - m_ref(x))^k / k!.
struct LocalCost {
    std::map<int, GridField> coefficients;
    GridField reference;

    explicit LocalCost(GridField ref) : reference(std::move(ref)) {}
    LocalCost(GridField ref, std::map<int, GridField> coeffs) : coefficients(std::move(coeffs)), reference(std::move(ref)) {
        for (const auto& [k, c] : coefficients) {
            require(k >= 0, ErrorKind::invalid_argument, "negative coefficient order");
            require_same_domain(c.domain, reference.domain);
        }
    }
    static LocalCost zero(const GridDomain& d) {
        return LocalCost(GridField(d, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d.size()))));
    }
    /// F(x, m) = F0(x), no measure dependence.
    static LocalCost potential(GridField f0) {
        GridField ref(f0.domain, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(f0.size())));
        return LocalCost(std::move(ref), {{0, std::move(f0)}});
    }

    [[nodiscard]] const GridDomain& domain() const { return reference.domain; }
    [[nodiscard]] int max_order() const { return coefficients.empty() ? 0 : coefficients.rbegin()->first; }
    [[nodiscard]] GridField coefficient(int k) const {
        auto it = coefficients.find(k);
        return it == coefficients.end() ? GridField(domain()) : it->second;
    }

    /// Nodal values F(x_i, m_i).
    [[nodiscard]] Eigen::VectorXd value(const Eigen::VectorXd& m) const { return series(m, 0); }
    /// Nodal derivative dF/dm(x_i, m_i).
    [[nodiscard]] Eigen::VectorXd derivative(const Eigen::VectorXd& m) const { return series(m, 1); }
    [[nodiscard]] Eigen::VectorXd second_derivative(const Eigen::VectorXd& m) const { return series(m, 2); }

private:
    [[nodiscard]] Eigen::VectorXd series(const Eigen::VectorXd& m, int shift) const {
        const Eigen::Index n = static_cast<Eigen::Index>(domain().size());
        require(m.size() == n, ErrorKind::invalid_argument, "density length does not match cost");
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
        const Eigen::VectorXd dm = m - reference.values;
        for (const auto& [k, c] : coefficients) {
            if (k < shift) continue;
            const int p = k - shift;
            double fact = 1.0;
            for (int j = 2; j <= p; ++j) fact *= j;
            out += (c.values.array() * dm.array().pow(p) / fact).matrix();
        }
        return out;
    }
};

/// Terminal costs share the local form G(x, m).
using MfgTerminal = LocalCost;

// ---------------------------------------------------------------------------
// Discrete operators

/// Node Hamiltonian: w_i H_i = sum over adjacent edges of (h/2) h_side(g_e).
inline Eigen::VectorXd node_hamiltonian(const GridDomain& d, const Hamiltonian& H, const Eigen::VectorXd& u) {
    const double h = d.spacing();
    const Eigen::VectorXd g = edge_gradient(d, u);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.size()));
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        const EdgeTerms t = H.edge(d.edge_midpoint(e), g[static_cast<Eigen::Index>(e)], h);
        out[static_cast<Eigen::Index>(l)] += 0.5 * h * t.hl / d.weight(l);
        out[static_cast<Eigen::Index>(r)] += 0.5 * h * t.hr / d.weight(r);
    }
    return out;
}

/// Jacobian of node_hamiltonian at u.
inline TriOperator hamiltonian_jacobian(const GridDomain& d, const Hamiltonian& H, const Eigen::VectorXd& u) {
    const double h = d.spacing();
    const Eigen::VectorXd g = edge_gradient(d, u);
    TriOperator op(d);
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        const auto li = static_cast<Eigen::Index>(l), ri = static_cast<Eigen::Index>(r);
        const EdgeTerms t = H.edge(d.edge_midpoint(e), g[static_cast<Eigen::Index>(e)], h);
        const double al = 0.5 * t.dl / d.weight(l), ar = 0.5 * t.dr / d.weight(r);
        op.upper[li] += al;
        op.diag[li] -= al;
        op.diag[ri] += ar;
        op.lower[ri] -= ar;
    }
    return op;
}

/// Fokker-Planck generator m -> Lap m + div(m H_p(grad u)); the exact adjoint
/// of the transport part of hamiltonian_jacobian.
inline TriOperator fp_operator(const GridDomain& d, const Hamiltonian& H, const Eigen::VectorXd& u) {
    const double h = d.spacing();
    const Eigen::VectorXd g = edge_gradient(d, u);
    Eigen::VectorXd pl(g.size()), pr(g.size());
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const EdgeTerms t = H.edge(d.edge_midpoint(e), g[static_cast<Eigen::Index>(e)], h);
        pl[static_cast<Eigen::Index>(e)] = 0.5 * t.dl;
        pr[static_cast<Eigen::Index>(e)] = 0.5 * t.dr;
    }
    return flux_generator(d, pl, pr);
}

/// Derivative of fp_operator(u) m in u: v -> div(c grad v), c_e = (m_L h_L'' + m_R h_R'')/2.
inline TriOperator control_operator(const GridDomain& d, const Hamiltonian& H, const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& m) {
    const double h = d.spacing();
    const Eigen::VectorXd g = edge_gradient(d, u);
    TriOperator op(d);
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        const auto li = static_cast<Eigen::Index>(l), ri = static_cast<Eigen::Index>(r);
        const EdgeTerms t = H.edge(d.edge_midpoint(e), g[static_cast<Eigen::Index>(e)], h);
        const double c = 0.5 * (m[li] * t.ddl + m[ri] * t.ddr) / h;
        op.upper[li] += c / d.weight(l);
        op.diag[li] -= c / d.weight(l);
        op.diag[ri] -= c / d.weight(r);
        op.lower[ri] += c / d.weight(r);
    }
    return op;
}

/// Nodal multiplication as a three-point operator.
inline TriOperator diagonal_operator(const GridDomain& d, const Eigen::VectorXd& diag) {
    TriOperator op(d);
    op.diag = diag;
    return op;
}

// ---------------------------------------------------------------------------
// Forward MFG system

struct MfgOptions {
    double theta = 0.5;
    double tol = 1e-9;
    std::size_t max_iter = 500;
    double newton_tol = 1e-13;
    std::size_t newton_max_iter = 50;
};

struct MfgSolution {
    TimeGrid time;
    GridDomain domain;
    Eigen::MatrixXd u; ///< (M+1) x N
    Eigen::MatrixXd m; ///< (M+1) x N
    std::size_t iterations = 0;
    double residual = 0.0; ///< last successive path distance
    std::vector<double> history;
    std::size_t damping_reductions = 0;

    [[nodiscard]] GridField u_at(std::size_t n) const { return {domain, u.row(static_cast<Eigen::Index>(n)).transpose()}; }
    [[nodiscard]] GridField m_at(std::size_t n) const { return {domain, m.row(static_cast<Eigen::Index>(n)).transpose()}; }
};

namespace detail {

/// One backward Crank-Nicolson HJB step solved by Newton:
/// (u - u1)/dt - Lap(u + u1)/2 + (H(u) + H(u1))/2 = (F0 + F1)/2.
inline Eigen::VectorXd hjb_step(const GridDomain& d, const Hamiltonian& H, const TriOperator& lap,
                                const Eigen::VectorXd& u1, const Eigen::VectorXd& fsum, double dt,
                                const MfgOptions& opt) {
    const Eigen::VectorXd fixed = u1 / dt + 0.5 * lap.apply(u1) - 0.5 * node_hamiltonian(d, H, u1) + 0.5 * fsum;
    Eigen::VectorXd u = u1;
    const double scale = std::max(1.0, fixed.cwiseAbs().maxCoeff());
    for (std::size_t it = 0; it < opt.newton_max_iter; ++it) {
        const Eigen::VectorXd res = u / dt - 0.5 * lap.apply(u) + 0.5 * node_hamiltonian(d, H, u) - fixed;
        require(res.allFinite(), ErrorKind::non_finite, "HJB residual is not finite");
        if (res.cwiseAbs().maxCoeff() <= opt.newton_tol * scale) return u;
        TriOperator jac = lap.shifted(1.0 / dt, -0.5);
        TriOperator dh = hamiltonian_jacobian(d, H, u);
        jac += dh.shifted(0.0, 0.5);
        u -= solve(jac, res);
    }
    const Eigen::VectorXd res = u / dt - 0.5 * lap.apply(u) + 0.5 * node_hamiltonian(d, H, u) - fixed;
    require(res.cwiseAbs().maxCoeff() <= 1e3 * opt.newton_tol * scale, ErrorKind::newton_divergence,
            "HJB Newton step did not converge");
    return u;
}

inline Eigen::MatrixXd solve_hjb(const GridDomain& d, const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G,
                                 const Eigen::MatrixXd& m, const TimeGrid& tg, const MfgOptions& opt) {
    const Eigen::Index steps = static_cast<Eigen::Index>(tg.steps);
    Eigen::MatrixXd u(steps + 1, m.cols());
    const TriOperator lap = laplacian(d);
    u.row(steps) = G.value(m.row(steps).transpose()).transpose();
    Eigen::VectorXd f_next = F.value(m.row(steps).transpose());
    for (Eigen::Index n = steps - 1; n >= 0; --n) {
        const Eigen::VectorXd f_now = F.value(m.row(n).transpose());
        u.row(n) = hjb_step(d, H, lap, u.row(n + 1).transpose(), f_now + f_next, tg.dt(), opt).transpose();
        f_next = f_now;
    }
    return u;
}

inline Eigen::MatrixXd solve_fp(const GridDomain& d, const Hamiltonian& H, const Eigen::MatrixXd& u,
                                const Eigen::VectorXd& m0, const TimeGrid& tg) {
    const Eigen::Index steps = static_cast<Eigen::Index>(tg.steps);
    Eigen::MatrixXd m(steps + 1, m0.size());
    m.row(0) = m0.transpose();
    const double dt = tg.dt();
    TriOperator l_now = fp_operator(d, H, u.row(0).transpose());
    for (Eigen::Index n = 0; n < steps; ++n) {
        const TriOperator l_next = fp_operator(d, H, u.row(n + 1).transpose());
        const Eigen::VectorXd rhs = l_now.shifted(1.0, 0.5 * dt).apply(m.row(n).transpose());
        m.row(n + 1) = solve(l_next.shifted(1.0, -0.5 * dt), rhs).transpose();
        l_now = l_next;
    }
    const double low = m.minCoeff();
    require(low >= -1e-10, ErrorKind::negative_density, "Fokker-Planck step produced density " + std::to_string(low));
    return m;
}

} // namespace detail

/// Coupled backward HJB / forward Fokker-Planck system by damped Picard
/// iteration on the density path.
inline MfgSolution mfg_forward(const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G, const GridField& m0,
                               const TimeGrid& tg, const MfgOptions& opt = {}) {
    const GridDomain& d = m0.domain;
    require_same_domain(d, F.domain());
    require_same_domain(d, G.domain());
    require(opt.theta > 0.0 && opt.theta <= 1.0, ErrorKind::invalid_argument, "damping must lie in (0, 1]");
    const Eigen::Index steps = static_cast<Eigen::Index>(tg.steps);
    Eigen::MatrixXd path = m0.values.transpose().replicate(steps + 1, 1);
    MfgSolution sol{tg, d, {}, {}, 0, INFINITY, {}, 0};
    double theta = opt.theta;
    bool converged = false;
    for (std::size_t it = 1; it <= opt.max_iter; ++it) {
        const Eigen::MatrixXd u = detail::solve_hjb(d, H, F, G, path, tg, opt);
        const Eigen::MatrixXd m_new = detail::solve_fp(d, H, u, m0.values, tg);
        const double diff = (m_new - path).cwiseAbs().maxCoeff();
        sol.history.push_back(diff);
        sol.iterations = it;
        sol.residual = diff;
        if (diff < opt.tol) {
            converged = true;
            break;
        }
        if (it > 5 && diff > sol.history[it - 2] && theta > 1.0 / 64) {
            theta *= 0.5;
            ++sol.damping_reductions;
        }
        // A decoupled HJB gives the exact path in one sweep.
        path = (it == 1 && F.max_order() == 0 && G.max_order() == 0) ? m_new : (1.0 - theta) * path + theta * m_new;
    }
    require(converged, ErrorKind::no_convergence,
            "Picard stopped after " + std::to_string(sol.iterations) + " iterations at distance " +
                std::to_string(sol.residual));
    sol.u = detail::solve_hjb(d, H, F, G, path, tg, opt);
    sol.m = detail::solve_fp(d, H, sol.u, m0.values, tg);
    return sol;
}

inline MfgSolution mfg_forward(const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G, const GridMeasure& m0,
                               const TimeGrid& tg, const MfgOptions& opt = {}) {
    return mfg_forward(H, F, G, m0.field(), tg, opt);
}

/// Max-norm residual of the discrete HJB equation for a computed solution.
inline double hjb_residual(const MfgSolution& s, const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G) {
    const GridDomain& d = s.domain;
    const TriOperator lap = laplacian(d);
    const double dt = s.time.dt();
    const Eigen::Index steps = static_cast<Eigen::Index>(s.time.steps);
    double worst = (s.u.row(steps).transpose() - G.value(s.m.row(steps).transpose())).cwiseAbs().maxCoeff();
    for (Eigen::Index n = 0; n < steps; ++n) {
        const Eigen::VectorXd a = s.u.row(n).transpose(), b = s.u.row(n + 1).transpose();
        const Eigen::VectorXd r = -(b - a) / dt - 0.5 * lap.apply(a + b) +
                                  0.5 * (node_hamiltonian(d, H, a) + node_hamiltonian(d, H, b)) -
                                  0.5 * (F.value(s.m.row(n).transpose()) + F.value(s.m.row(n + 1).transpose()));
        worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
    return worst;
}

/// Max-norm residual of the discrete Fokker-Planck equation.
inline double fp_residual(const MfgSolution& s, const Hamiltonian& H) {
    const GridDomain& d = s.domain;
    const double dt = s.time.dt();
    double worst = 0.0;
    for (Eigen::Index n = 0; n < static_cast<Eigen::Index>(s.time.steps); ++n) {
        const Eigen::VectorXd a = s.m.row(n).transpose(), b = s.m.row(n + 1).transpose();
        const Eigen::VectorXd r = (b - a) / dt - 0.5 * (fp_operator(d, H, s.u.row(n).transpose()).apply(a) +
                                                        fp_operator(d, H, s.u.row(n + 1).transpose()).apply(b));
        worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Static (ergodic) solutions

struct StaticSolution {
    double gamma = 0.0;
    GridField u0;
    GridMeasure m0;
    double hjb_residual = 0.0;
    double fp_residual = 0.0;
    std::size_t iterations = 0;
};

struct StaticOptions {
    double tol = 1e-12;
    std::size_t max_iter = 60;
};

namespace detail {

struct StaticResidual {
    Eigen::VectorXd hjb, fp;
};

inline StaticResidual static_residual(const GridDomain& d, const Hamiltonian& H, const LocalCost& F, double gamma,
                                      const Eigen::VectorXd& u, const Eigen::VectorXd& m) {
    const TriOperator lap = laplacian(d);
    StaticResidual r;
    r.hjb = (Eigen::VectorXd::Constant(u.size(), gamma) - lap.apply(u) + node_hamiltonian(d, H, u) - F.value(m));
    r.fp = fp_operator(d, H, u).apply(m);
    return r;
}

} // namespace detail

/// Newton on (gamma, u0, m0) for gamma - Lap u0 + H(x, grad u0) = F(x, m0),
/// Lap m0 + div(m0 H_p) = 0, with int u0 = 0 and int m0 = 1.
inline StaticSolution static_solve(const Hamiltonian& H, const LocalCost& F, const StaticOptions& opt = {}) {
    const GridDomain& d = F.domain();
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    const Eigen::VectorXd& w = d.weights();
    const double total = w.sum();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd m = Eigen::VectorXd::Constant(n, 1.0 / total);
    double gamma = w.dot(F.value(m)) / total;
    const Eigen::Index size = 2 * n + 1;

    auto pack = [&](double g, const Eigen::VectorXd& uu, const Eigen::VectorXd& mm) {
        const auto r = detail::static_residual(d, H, F, g, uu, mm);
        Eigen::VectorXd out(size);
        out.head(n) = r.hjb;
        out.segment(n, n - 1) = r.fp.head(n - 1);
        out[2 * n - 1] = w.dot(mm) - 1.0;
        out[2 * n] = w.dot(uu);
        return out;
    };

    Eigen::VectorXd res = pack(gamma, u, m);
    std::size_t it = 0;
    const TriOperator lap = laplacian(d);
    for (; it < opt.max_iter && res.cwiseAbs().maxCoeff() > opt.tol; ++it) {
        // Unknowns [gamma, u, m].
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(size + 1, size);
        jac.block(0, 0, n, 1).setOnes();
        TriOperator a = lap.shifted(0.0, -1.0);
        a += hamiltonian_jacobian(d, H, u);
        jac.block(0, 1, n, n) = a.dense();
        jac.block(0, 1 + n, n, n) = -F.derivative(m).asDiagonal().toDenseMatrix();
        const Eigen::MatrixXd c = control_operator(d, H, u, m).dense();
        const Eigen::MatrixXd l = fp_operator(d, H, u).dense();
        jac.block(n, 1, n - 1, n) = c.topRows(n - 1);
        jac.block(n, 1 + n, n - 1, n) = l.topRows(n - 1);
        jac.block(2 * n - 1, 1 + n, 1, n) = w.transpose();
        jac.block(2 * n, 1, 1, n) = w.transpose();
        Eigen::MatrixXd sq = jac.topRows(size);
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sq);
        const Eigen::VectorXd delta = lu.solve(res);
        require(delta.allFinite(), ErrorKind::newton_divergence, "static Newton step is not finite");
        // Backtracking on the residual norm.
        double step = 1.0;
        const double base = res.norm();
        Eigen::VectorXd trial;
        bool accepted = false;
        for (int bt = 0; bt < 30; ++bt) {
            const double g2 = gamma - step * delta[0];
            const Eigen::VectorXd u2 = u - step * delta.segment(1, n);
            const Eigen::VectorXd m2 = m - step * delta.segment(1 + n, n);
            trial = pack(g2, u2, m2);
            if (trial.allFinite() && (trial.norm() < base || trial.cwiseAbs().maxCoeff() <= opt.tol)) {
                gamma = g2;
                u = u2;
                m = m2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        // No descent left: either at the round-off floor or diverging.
        if (!accepted) break;
        res = trial;
    }
    require(res.cwiseAbs().maxCoeff() <= 1e3 * opt.tol, ErrorKind::newton_divergence,
            "static Newton did not converge; residual " + std::to_string(res.cwiseAbs().maxCoeff()));
    const auto r = detail::static_residual(d, H, F, gamma, u, m);
    const double mass = w.dot(m);
    m /= mass;
    return {gamma, GridField(d, u), make_measure(GridField(d, m)), r.hjb.cwiseAbs().maxCoeff(), r.fp.cwiseAbs().maxCoeff(),
            it};
}

/// Quasi-static path (u0 + gamma (T - t), m0) on a time grid.
inline MfgSolution quasi_static_path(const StaticSolution& s, const TimeGrid& tg) {
    const GridDomain& d = s.u0.domain;
    const Eigen::Index steps = static_cast<Eigen::Index>(tg.steps);
    MfgSolution out{tg, d, Eigen::MatrixXd(steps + 1, static_cast<Eigen::Index>(d.size())),
                    s.m0.density().transpose().replicate(steps + 1, 1), 0, 0.0, {}, 0};
    for (Eigen::Index n = 0; n <= steps; ++n)
        out.u.row(n) = (s.u0.values.array() + s.gamma * (tg.T - tg.time(static_cast<std::size_t>(n)))).matrix().transpose();
    return out;
}

} // namespace mil
