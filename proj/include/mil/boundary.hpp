#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/mfg.hpp"
#include "mil/parallel.hpp"
#include "mil/pdesolve.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mil {

/// MFG system on [0,1] with zero-flux Fokker-Planck and homogeneous Neumann
/// HJB conditions (both built into the finite-volume operators).
inline MfgSolution neumann_mfg_forward(const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G,
                                       const GridField& m0, const TimeGrid& tg, const MfgOptions& opt = {}) {
    require(!m0.domain.periodic(), ErrorKind::invalid_argument, "Neumann MFG needs the interval");
    return mfg_forward(H, F, G, m0, tg, opt);
}

struct BoundaryTrace {
    std::vector<double> times;
    std::vector<double> left;
    std::vector<double> right;
};

inline BoundaryTrace boundary_trace(const MfgSolution& sol) {
    BoundaryTrace t;
    const Eigen::Index last = sol.u.cols() - 1;
    for (std::size_t n = 0; n <= sol.time.steps; ++n) {
        t.times.push_back(sol.time.time(n));
        t.left.push_back(sol.u(static_cast<Eigen::Index>(n), 0));
        t.right.push_back(sol.u(static_cast<Eigen::Index>(n), last));
    }
    return t;
}

inline double trace_distance(const BoundaryTrace& a, const BoundaryTrace& b) {
    require(a.times.size() == b.times.size(), ErrorKind::invalid_argument, "traces have different lengths");
    double worst = 0.0;
    for (std::size_t n = 0; n < a.times.size(); ++n)
        worst = std::max({worst, std::abs(a.left[n] - b.left[n]), std::abs(a.right[n] - b.right[n])});
    return worst;
}

/// Largest boundary-trace discrepancy between two costs over a probe family
/// of terminal costs and initial densities.
inline double boundary_uniqueness_probe(const LocalCost& F1, const LocalCost& F2, const Hamiltonian& H,
                                        std::span<const MfgTerminal> terminals, std::span<const GridField> initials,
                                        const TimeGrid& tg, const MfgOptions& opt = {}, std::size_t threads = 1) {
    const std::size_t total = terminals.size() * initials.size();
    std::vector<double> gaps(total, 0.0);
    parallel_for(total, threads, [&](std::size_t q) {
        const MfgTerminal& G = terminals[q / initials.size()];
        const GridField& m0 = initials[q % initials.size()];
        gaps[q] = trace_distance(boundary_trace(neumann_mfg_forward(H, F1, G, m0, tg, opt)),
                                 boundary_trace(neumann_mfg_forward(H, F2, G, m0, tg, opt)));
    });
    return gaps.empty() ? 0.0 : *std::max_element(gaps.begin(), gaps.end());
}

/// Black-box time-T solution map g -> u(T) of a zero-flux Fokker-Planck flow.
class SemigroupOracle {
public:
    SemigroupOracle(std::function<GridField(const GridField&)> apply, double horizon)
        : apply_(std::move(apply)), horizon_(horizon), calls_(std::make_shared<std::atomic<std::size_t>>(0)) {}

    GridField operator()(const GridField& g) const {
        calls_->fetch_add(1);
        return apply_(g);
    }
    [[nodiscard]] double horizon() const { return horizon_; }
    [[nodiscard]] std::size_t calls() const { return calls_->load(); }

private:
    std::function<GridField(const GridField&)> apply_;
    double horizon_;
    std::shared_ptr<std::atomic<std::size_t>> calls_;
};

inline SemigroupOracle make_semigroup_oracle(const DriftPotential& drift, double horizon) {
    const Eigen::MatrixXd p = neumann_solution_operator(drift, horizon);
    const GridDomain d = drift.domain();
    return SemigroupOracle([p, d](const GridField& g) { return GridField(d, p * g.values); }, horizon);
}

/// Max-norm defect of apply(a g1 + b g2) - a apply(g1) - b apply(g2).
inline double linearity_defect(const SemigroupOracle& s, const GridField& g1, const GridField& g2, double a, double b) {
    const GridField lhs = s(a * g1 + b * g2);
    const GridField rhs = a * s(g1) + b * s(g2);
    return (lhs.values - rhs.values).cwiseAbs().maxCoeff();
}

struct PerronCheck {
    double min_entry = 0.0;
    double mass_error = 0.0;
    double top_eigenvalue = 0.0;
    double second_eigenvalue = 0.0;
    double max_imaginary = 0.0;
};

struct DriftRecovery {
    GridField f;
    GridField f_prime;
    GridField f_second;
    /// V = f'^2 / 4 - f'' / 2.
    GridField V;
    double eigen_gap = 0.0;
    PerronCheck perron;
};

namespace detail {

/// Fourth-order differences with even reflection across both ends.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> reflected_derivatives(const GridDomain& d, const Eigen::VectorXd& f) {
    const Eigen::Index n = f.size();
    const double h = d.spacing();
    auto at = [&](Eigen::Index i) {
        if (i < 0) i = -i;
        if (i > n - 1) i = 2 * (n - 1) - i;
        return f[i];
    };
    Eigen::VectorXd d1(n), d2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double a = at(i - 2), b = at(i - 1), c = at(i), e = at(i + 1), g = at(i + 2);
        d1[i] = (a - 8 * b + 8 * e - g) / (12 * h);
        d2[i] = (-a + 16 * b - 30 * c + 16 * e - g) / (12 * h * h);
    }
    return {d1, d2};
}

} // namespace detail

/// Probes the semigroup with unit vectors, checks its Perron structure and
/// reads f = -log of the eigenvalue-1 eigenvector (gauge int f = 0).
inline DriftRecovery recover_drift(const SemigroupOracle& oracle, const GridDomain& d, std::size_t threads = 1) {
    require(!d.periodic(), ErrorKind::invalid_argument, "drift recovery needs the interval");
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    Eigen::MatrixXd p(n, n);
    parallel_for(d.size(), threads, [&](std::size_t j) {
        GridField e(d);
        e[j] = 1.0;
        p.col(static_cast<Eigen::Index>(j)) = oracle(e).values;
    });
    const Eigen::VectorXd& w = d.weights();
    PerronCheck pc;
    pc.min_entry = p.minCoeff();
    pc.mass_error = (w.transpose() * p - w.transpose()).cwiseAbs().maxCoeff();
    require(pc.min_entry >= -1e-12, ErrorKind::invalid_argument,
            "semigroup is not positivity preserving: entry " + std::to_string(pc.min_entry));
    require(pc.mass_error <= 1e-10, ErrorKind::invalid_argument,
            "semigroup does not preserve mass: defect " + std::to_string(pc.mass_error));

    const Eigen::EigenSolver<Eigen::MatrixXd> es(p);
    require(es.info() == Eigen::Success, ErrorKind::eig_solver_failure, "semigroup eigensolver failed");
    const Eigen::VectorXcd lam = es.eigenvalues();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return lam[a].real() > lam[b].real(); });
    pc.top_eigenvalue = lam[order[0]].real();
    pc.second_eigenvalue = lam[order[1]].real();
    pc.max_imaginary = lam.imag().cwiseAbs().maxCoeff();
    require(std::abs(pc.top_eigenvalue - 1.0) <= 1e-9, ErrorKind::spectral_gap_failure,
            "top eigenvalue " + std::to_string(pc.top_eigenvalue) + " is not 1");
    const double gap = pc.top_eigenvalue - pc.second_eigenvalue;
    require(gap > 1e-10, ErrorKind::spectral_gap_failure, "eigenvalue 1 is not simple");

    Eigen::VectorXd v = es.eigenvectors().col(order[0]).real();
    if (v.sum() < 0) v = -v;
    require(v.minCoeff() > 0.0, ErrorKind::non_positive_eigenvector,
            "stationary eigenvector has entry " + std::to_string(v.minCoeff()));
    Eigen::VectorXd f = -v.array().log().matrix();
    f.array() -= d.integrate(f) / w.sum();
    const auto [d1, d2] = detail::reflected_derivatives(d, f);
    const Eigen::VectorXd vpot = 0.25 * d1.cwiseProduct(d1) - 0.5 * d2;
    return {GridField(d, f), GridField(d, d1), GridField(d, d2), GridField(d, vpot), gap, pc};
}

/// Sup error of the recovered V against V = f'^2/4 - f''/2 from exact
/// derivatives, relative to max |V| (absolute when V vanishes).
inline double potential_error(const DriftRecovery& r, const std::function<double(double)>& f_prime,
                              const std::function<double(double)>& f_second) {
    const GridDomain& d = r.V.domain;
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double fp = f_prime(d.x(i));
        const double truth = 0.25 * fp * fp - 0.5 * f_second(d.x(i));
        worst = std::max(worst, std::abs(r.V[i] - truth));
        scale = std::max(scale, std::abs(truth));
    }
    return scale > 1e-12 ? worst / scale : worst;
}

} // namespace mil
