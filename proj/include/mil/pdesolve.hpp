#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/linalg.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mil {

/// Drift potential f for d_t m = m'' + (m f')'.
struct DriftPotential {
    GridField f;
    GridField f_prime;

    [[nodiscard]] const GridDomain& domain() const { return f.domain; }
};

inline void check_neumann_compatible(const DriftPotential& d) {
    if (d.domain().periodic()) return;
    const std::size_t n = d.domain().size();
    require(std::abs(d.f_prime[0]) <= 1e-8 && std::abs(d.f_prime[n - 1]) <= 1e-8, ErrorKind::invalid_argument,
            "drift on the interval needs f'(0) = f'(1) = 0");
}

inline DriftPotential make_drift(const GridDomain& d, const std::function<double(double)>& f,
                                 const std::function<double(double)>& f_prime) {
    DriftPotential out{GridField::from_function(d, f), GridField::from_function(d, f_prime)};
    check_neumann_compatible(out);
    return out;
}

/// Drift from grid values alone; f' by centred differences (one-sided zero on
/// the interval ends, matching the Neumann class).
inline DriftPotential make_drift(const GridField& f) {
    const GridDomain& d = f.domain;
    const std::size_t n = d.size();
    GridField fp(d);
    const double h = d.spacing();
    for (std::size_t i = 0; i < n; ++i) {
        if (d.periodic()) fp[i] = (f[(i + 1) % n] - f[(i + n - 1) % n]) / (2 * h);
        else if (i == 0 || i == n - 1) fp[i] = 0.0;
        else fp[i] = (f[i + 1] - f[i - 1]) / (2 * h);
    }
    return {f, fp};
}

inline DriftPotential zero_drift(const GridDomain& d) { return {GridField(d), GridField(d)}; }

/// Edge drift b_e = (2/h) tanh((f_R - f_L)/2): the centred flux with this
/// drift has e^{-f} as an exact discrete equilibrium.
inline Eigen::VectorXd edge_drift(const DriftPotential& drift) {
    const GridDomain& d = drift.domain();
    Eigen::VectorXd b(static_cast<Eigen::Index>(d.edge_count()));
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        b[static_cast<Eigen::Index>(e)] = (2.0 / d.spacing()) * std::tanh(0.5 * (drift.f[r] - drift.f[l]));
    }
    return b;
}

/// Generator L of d_t m = L m for a drift potential.
inline TriOperator fp_generator(const DriftPotential& drift) {
    const Eigen::VectorXd half = 0.5 * edge_drift(drift);
    return flux_generator(drift.domain(), half, half);
}

struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    std::size_t steps = 1;

    TimeGrid(double start, double end, std::size_t m) : t0(start), T(end), steps(m) {
        require(start >= 0.0 && end > start, ErrorKind::invalid_argument, "need 0 <= t0 < T");
        require(m >= 1, ErrorKind::invalid_argument, "need at least one time step");
    }
    [[nodiscard]] double dt() const { return (T - t0) / static_cast<double>(steps); }
    [[nodiscard]] double time(std::size_t n) const { return t0 + static_cast<double>(n) * dt(); }
    [[nodiscard]] std::vector<double> trapezoid_weights() const {
        std::vector<double> w(steps + 1, dt());
        w.front() *= 0.5;
        w.back() *= 0.5;
        return w;
    }
};

/// Space-time field, one row per time level.
struct EvolutionField {
    TimeGrid time;
    GridDomain domain;
    Eigen::MatrixXd snapshots; ///< (M+1) x N
    double conserved_mass = 0.0;

    [[nodiscard]] GridField snapshot(std::size_t n) const {
        return {domain, snapshots.row(static_cast<Eigen::Index>(n)).transpose()};
    }
    [[nodiscard]] GridField final_snapshot() const { return snapshot(time.steps); }
};

enum class TimeScheme {
    /// exp(dt L) through the symmetrised eigendecomposition; exact in time.
    exponential,
    crank_nicolson,
};

/// Eigendecomposition of -L symmetrised by D = W e^{f}: D(-L) is symmetric
/// because the discrete flux satisfies detailed balance with e^{-f}.
class SpectralPropagator {
public:
    explicit SpectralPropagator(const DriftPotential& drift) : domain_(drift.domain()) {
        const GridDomain& d = domain_;
        const Eigen::Index n = static_cast<Eigen::Index>(d.size());
        const double fmin = drift.f.values.minCoeff();
        // D = W / pi with pi = e^{-(f - fmin)}; the constant cancels.
        sqrt_d_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i)
            sqrt_d_[i] = std::sqrt(d.weights()[i] * std::exp(drift.f.values[i] - fmin));
        const Eigen::MatrixXd a = -fp_generator(drift).dense();
        Eigen::MatrixXd s = sqrt_d_.asDiagonal() * a * sqrt_d_.cwiseInverse().asDiagonal();
        asymmetry_ = (s - s.transpose()).cwiseAbs().maxCoeff() / std::max(1.0, s.cwiseAbs().maxCoeff());
        s = 0.5 * (s + s.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
        require(es.info() == Eigen::Success, ErrorKind::eig_solver_failure, "symmetric eigensolver failed");
        lambda_ = es.eigenvalues();
        q_ = es.eigenvectors();
    }

    [[nodiscard]] const GridDomain& domain() const { return domain_; }
    [[nodiscard]] const Eigen::VectorXd& eigenvalues() const { return lambda_; }
    /// Orthonormal eigenvectors of the symmetrised operator (columns).
    [[nodiscard]] const Eigen::MatrixXd& symmetric_vectors() const { return q_; }
    [[nodiscard]] const Eigen::VectorXd& sqrt_d() const { return sqrt_d_; }
    [[nodiscard]] double asymmetry() const { return asymmetry_; }

    /// exp(-t A) as a dense matrix acting on density vectors.
    [[nodiscard]] Eigen::MatrixXd propagator(double t) const {
        const Eigen::VectorXd decay = (-t * lambda_.array()).exp();
        const Eigen::MatrixXd left = sqrt_d_.cwiseInverse().asDiagonal() * q_;
        const Eigen::MatrixXd right = q_.transpose() * sqrt_d_.asDiagonal();
        Eigen::MatrixXd p = left * decay.asDiagonal() * right;
        // Remove the round-off mass defect along the equilibrium, which p fixes.
        const Eigen::VectorXd& w = domain_.weights();
        const Eigen::VectorXd pi = sqrt_d_.cwiseInverse().cwiseProduct(sqrt_d_.cwiseInverse()).cwiseProduct(w);
        const Eigen::RowVectorXd defect = w.transpose() * p - w.transpose();
        p -= (pi / w.dot(pi)) * defect;
        return p;
    }

private:
    GridDomain domain_;
    Eigen::VectorXd sqrt_d_;
    Eigen::VectorXd lambda_;
    Eigen::MatrixXd q_;
    double asymmetry_ = 0.0;
};

namespace detail {

inline EvolutionField make_evolution(const TimeGrid& tg, const GridDomain& d) {
    return {tg, d, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tg.steps + 1), static_cast<Eigen::Index>(d.size())),
            0.0};
}

} // namespace detail

/// Forward Fokker-Planck solve d_t m = m'' + (m f')' from signed initial data.
inline EvolutionField fp_solve(const DriftPotential& drift, const GridField& init, const TimeGrid& tg,
                               TimeScheme scheme = TimeScheme::exponential) {
    require_same_domain(drift.domain(), init.domain);
    EvolutionField out = detail::make_evolution(tg, init.domain);
    out.snapshots.row(0) = init.values.transpose();
    out.conserved_mass = init.mass();
    Eigen::VectorXd m = init.values;
    if (scheme == TimeScheme::exponential) {
        const Eigen::MatrixXd step = SpectralPropagator(drift).propagator(tg.dt());
        for (std::size_t n = 1; n <= tg.steps; ++n) {
            m = step * m;
            out.snapshots.row(static_cast<Eigen::Index>(n)) = m.transpose();
        }
    } else {
        const TriOperator gen = fp_generator(drift);
        const TriOperator lhs = gen.shifted(1.0, -0.5 * tg.dt());
        const TriOperator rhs = gen.shifted(1.0, 0.5 * tg.dt());
        for (std::size_t n = 1; n <= tg.steps; ++n) {
            m = solve(lhs, rhs.apply(m));
            out.snapshots.row(static_cast<Eigen::Index>(n)) = m.transpose();
        }
    }
    return out;
}

/// e^{-f} / Z.
inline GridMeasure stationary_measure(const DriftPotential& drift) {
    const double fmin = drift.f.values.minCoeff();
    GridField rho(drift.domain(), (-(drift.f.values.array() - fmin)).exp().matrix());
    return normalized_measure(std::move(rho));
}

/// Max-norm of L applied to the stationary density.
inline double stationary_residual(const DriftPotential& drift) {
    const GridMeasure m = stationary_measure(drift);
    return fp_generator(drift).apply(m.density()).cwiseAbs().maxCoeff();
}

/// Eigenpairs of A = -L with dual vectors: <E_hat_j, E_k> = delta_jk in quadrature.
struct EigenSystem {
    DriftPotential drift;
    std::vector<double> lambda;
    std::vector<GridField> E;
    std::vector<GridField> E_dual;

    [[nodiscard]] std::size_t size() const { return lambda.size(); }
};

inline EigenSystem fp_eigensystem(const DriftPotential& drift, std::size_t k, double degenerate_tol = 1e-7) {
    const GridDomain& d = drift.domain();
    const std::size_t n = d.size();
    require(k >= 1 && k <= n, ErrorKind::invalid_argument, "mode count must be in [1, N]");
    const SpectralPropagator sp(drift);
    require(sp.asymmetry() <= 1e-9, ErrorKind::complex_eigenvalue,
            "operator is not symmetrisable; asymmetry " + std::to_string(sp.asymmetry()));
    const Eigen::VectorXd& lam = sp.eigenvalues();
    Eigen::MatrixXd q = sp.symmetric_vectors();
    const Eigen::Index nn = static_cast<Eigen::Index>(n);

    // Deterministic basis inside degenerate blocks: project coordinate unit
    // vectors in index order onto the block and orthonormalise.
    Eigen::Index start = 0;
    while (start < nn) {
        Eigen::Index end = start + 1;
        while (end < nn && std::abs(lam[end] - lam[start]) <= degenerate_tol * std::max(1.0, std::abs(lam[start]))) ++end;
        const Eigen::Index dim = end - start;
        if (dim > 1) {
            const Eigen::MatrixXd block = q.middleCols(start, dim);
            Eigen::MatrixXd basis(nn, dim);
            Eigen::Index filled = 0;
            for (Eigen::Index seed = 0; seed < nn && filled < dim; ++seed) {
                Eigen::VectorXd v = block * block.row(seed).transpose();
                for (Eigen::Index j = 0; j < filled; ++j) v -= basis.col(j).dot(v) * basis.col(j);
                const double norm = v.norm();
                if (norm > 1e-6) basis.col(filled++) = v / norm;
            }
            require(filled == dim, ErrorKind::eig_solver_failure, "degenerate block basis incomplete");
            q.middleCols(start, dim) = basis;
        }
        start = end;
    }

    EigenSystem out{drift, {}, {}, {}};
    const Eigen::VectorXd& sd = sp.sqrt_d();
    for (std::size_t j = 0; j < k; ++j) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        Eigen::VectorXd y = q.col(jj);
        // Sign: first entry of significant magnitude is positive.
        const double big = y.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < nn; ++i) {
            if (std::abs(y[i]) > 1e-6 * big) {
                if (y[i] < 0) y = -y;
                break;
            }
        }
        double l = lam[jj];
        require(l >= -1e-9 * std::max(1.0, lam.cwiseAbs().maxCoeff()), ErrorKind::eig_solver_failure,
                "negative eigenvalue " + std::to_string(l));
        if (j == 0) l = std::max(0.0, l);
        const Eigen::VectorXd e = sd.cwiseInverse().cwiseProduct(y);
        // Left eigenvector of A scaled by 1/w: D E / w.
        const Eigen::VectorXd dual = sd.cwiseProduct(y).cwiseQuotient(d.weights());
        out.lambda.push_back(l);
        out.E.emplace_back(d, e);
        out.E_dual.emplace_back(d, dual);
    }
    return out;
}

/// Backward solve of -d_t phi = phi'' - f' phi' from terminal data; the exact
/// discrete adjoint of fp_solve, so <psi, mu(T)> = <phi(t0), mu(t0)>.
inline EvolutionField backward_dual_solve(const DriftPotential& drift, const GridField& terminal, const TimeGrid& tg,
                                          TimeScheme scheme = TimeScheme::exponential) {
    require_same_domain(drift.domain(), terminal.domain);
    const GridDomain& d = drift.domain();
    EvolutionField out = detail::make_evolution(tg, d);
    Eigen::VectorXd phi = terminal.values;
    out.snapshots.row(static_cast<Eigen::Index>(tg.steps)) = phi.transpose();
    const Eigen::VectorXd& w = d.weights();
    if (scheme == TimeScheme::exponential) {
        const Eigen::MatrixXd p = SpectralPropagator(drift).propagator(tg.dt());
        const Eigen::MatrixXd adj = w.cwiseInverse().asDiagonal() * p.transpose() * w.asDiagonal();
        for (std::size_t n = tg.steps; n-- > 0;) {
            phi = adj * phi;
            out.snapshots.row(static_cast<Eigen::Index>(n)) = phi.transpose();
        }
    } else {
        const Eigen::MatrixXd l = fp_generator(drift).dense();
        const Eigen::MatrixXd ladj = w.cwiseInverse().asDiagonal() * l.transpose() * w.asDiagonal();
        const Eigen::Index n = ladj.rows();
        const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(id - 0.5 * tg.dt() * ladj);
        const Eigen::MatrixXd rhs = id + 0.5 * tg.dt() * ladj;
        for (std::size_t k = tg.steps; k-- > 0;) {
            phi = lu.solve(rhs * phi);
            out.snapshots.row(static_cast<Eigen::Index>(k)) = phi.transpose();
        }
    }
    out.conserved_mass = out.snapshot(0).mass();
    return out;
}

/// Generator of d_t m = m'' - (b m)' for a node velocity field b.
inline TriOperator velocity_generator(const GridField& b) {
    const GridDomain& d = b.domain;
    Eigen::VectorXd push(static_cast<Eigen::Index>(d.edge_count()));
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        push[static_cast<Eigen::Index>(e)] = -0.25 * (b[l] + b[r]);
    }
    return flux_generator(d, push, push);
}

/// Backward solve of -d_t phi - phi'' - b phi' = 0 for a general velocity b
/// (Crank-Nicolson on the discrete adjoint of velocity_generator).
inline EvolutionField backward_dual_solve(const GridField& b, const GridField& terminal, const TimeGrid& tg) {
    require_same_domain(b.domain, terminal.domain);
    const GridDomain& d = b.domain;
    const Eigen::VectorXd& w = d.weights();
    const Eigen::MatrixXd l = velocity_generator(b).dense();
    const Eigen::MatrixXd ladj = w.cwiseInverse().asDiagonal() * l.transpose() * w.asDiagonal();
    const Eigen::Index n = ladj.rows();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(id - 0.5 * tg.dt() * ladj);
    const Eigen::MatrixXd rhs = id + 0.5 * tg.dt() * ladj;
    EvolutionField out = detail::make_evolution(tg, d);
    Eigen::VectorXd phi = terminal.values;
    out.snapshots.row(static_cast<Eigen::Index>(tg.steps)) = phi.transpose();
    for (std::size_t k = tg.steps; k-- > 0;) {
        phi = lu.solve(rhs * phi);
        out.snapshots.row(static_cast<Eigen::Index>(k)) = phi.transpose();
    }
    out.conserved_mass = out.snapshot(0).mass();
    return out;
}

/// Time-T solution operator of the zero-flux Fokker-Planck equation on the
/// interval; column j is the evolution of the j-th grid unit vector.
inline Eigen::MatrixXd neumann_solution_operator(const DriftPotential& drift, double horizon) {
    require(!drift.domain().periodic(), ErrorKind::invalid_argument, "Neumann operator needs the interval");
    require(horizon > 0.0, ErrorKind::invalid_argument, "horizon must be positive");
    check_neumann_compatible(drift);
    return SpectralPropagator(drift).propagator(horizon);
}

} // namespace mil
