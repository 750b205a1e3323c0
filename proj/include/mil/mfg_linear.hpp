#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/linalg.hpp"
#include "mil/mfg.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace mil {

/// Space-time fields (v, rho) of a linearized MFG system.
struct MfgLinearSolution {
    TimeGrid time;
    GridDomain domain;
    Eigen::MatrixXd v;   ///< (M+1) x N
    Eigen::MatrixXd rho; ///< (M+1) x N

    [[nodiscard]] GridField v_at(std::size_t n) const { return {domain, v.row(static_cast<Eigen::Index>(n)).transpose()}; }
    [[nodiscard]] GridField rho_at(std::size_t n) const {
        return {domain, rho.row(static_cast<Eigen::Index>(n)).transpose()};
    }
};

/// Right-hand sides added to the linearized equations (empty means zero).
struct LinearSources {
    Eigen::MatrixXd hjb;      ///< M x N, one row per time step
    Eigen::MatrixXd fp;       ///< M x N
    Eigen::VectorXd terminal; ///< N
};

/// Linearization of the discrete MFG system around a path (u, m):
///   -(v1 - v0)/dt - Lap(v0 + v1)/2 + (B0 v0 + B1 v1)/2 - (K0 r0 + K1 r1)/2 = s_hjb
///   (r1 - r0)/dt - (L0 r0 + C0 v0 + L1 r1 + C1 v1)/2 = s_fp
///   r(0) = mu0,  v(T) = dG r(T) + s_T
/// with B the Hamiltonian Jacobian, L the Fokker-Planck generator, C its
/// derivative in u and K, dG the local cost derivatives. Assembled as one
/// sparse space-time matrix and factorized once.
class LinearizedMfg {
public:
    LinearizedMfg(const MfgSolution& base, const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G)
        : time_(base.time), domain_(base.domain) {
        const GridDomain& d = domain_;
        const std::size_t steps = time_.steps;
        n_ = static_cast<Eigen::Index>(d.size());
        const double dt = time_.dt();
        const TriOperator lap = laplacian(d);
        std::vector<TriOperator> b, l, c;
        std::vector<Eigen::VectorXd> k;
        for (std::size_t t = 0; t <= steps; ++t) {
            const Eigen::VectorXd u = base.u.row(static_cast<Eigen::Index>(t)).transpose();
            const Eigen::VectorXd m = base.m.row(static_cast<Eigen::Index>(t)).transpose();
            b.push_back(hamiltonian_jacobian(d, H, u));
            l.push_back(fp_operator(d, H, u));
            c.push_back(control_operator(d, H, u, m));
            k.push_back(F.derivative(m));
        }
        const Eigen::VectorXd dg = G.derivative(base.m.row(static_cast<Eigen::Index>(steps)).transpose());

        std::vector<Eigen::Triplet<double>> trip;
        const Eigen::Index nk = n_;
        auto add_tri = [&](Eigen::Index row0, Eigen::Index col0, const TriOperator& op, double s) {
            const bool wrap = d.periodic();
            for (Eigen::Index i = 0; i < nk; ++i) {
                trip.emplace_back(row0 + i, col0 + i, s * op.diag[i]);
                if (i > 0) trip.emplace_back(row0 + i, col0 + i - 1, s * op.lower[i]);
                else if (wrap) trip.emplace_back(row0 + i, col0 + nk - 1, s * op.lower[i]);
                if (i + 1 < nk) trip.emplace_back(row0 + i, col0 + i + 1, s * op.upper[i]);
                else if (wrap) trip.emplace_back(row0 + i, col0, s * op.upper[i]);
            }
        };
        auto add_diag = [&](Eigen::Index row0, Eigen::Index col0, const Eigen::VectorXd& dv, double s) {
            for (Eigen::Index i = 0; i < nk; ++i) trip.emplace_back(row0 + i, col0 + i, s * dv[i]);
        };
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(nk);
        // Row blocks: [r(0)], then per step [fp_n], [hjb_n], then [terminal].
        add_diag(0, col_rho(0), ones, 1.0);
        for (std::size_t t = 0; t < steps; ++t) {
            const Eigen::Index rf = row_fp(t), rh = row_hjb(t);
            add_diag(rf, col_rho(t + 1), ones, 1.0 / dt);
            add_diag(rf, col_rho(t), ones, -1.0 / dt);
            add_tri(rf, col_rho(t), l[t], -0.5);
            add_tri(rf, col_rho(t + 1), l[t + 1], -0.5);
            add_tri(rf, col_v(t), c[t], -0.5);
            add_tri(rf, col_v(t + 1), c[t + 1], -0.5);

            add_diag(rh, col_v(t + 1), ones, -1.0 / dt);
            add_diag(rh, col_v(t), ones, 1.0 / dt);
            add_tri(rh, col_v(t), lap, -0.5);
            add_tri(rh, col_v(t + 1), lap, -0.5);
            add_tri(rh, col_v(t), b[t], 0.5);
            add_tri(rh, col_v(t + 1), b[t + 1], 0.5);
            add_diag(rh, col_rho(t), k[t], -0.5);
            add_diag(rh, col_rho(t + 1), k[t + 1], -0.5);
        }
        const Eigen::Index rt = row_terminal();
        add_diag(rt, col_v(steps), ones, 1.0);
        add_diag(rt, col_rho(steps), dg, -1.0);

        const Eigen::Index total = 2 * nk * static_cast<Eigen::Index>(steps + 1);
        matrix_.resize(total, total);
        matrix_.setFromTriplets(trip.begin(), trip.end());
        matrix_.makeCompressed();
        lu_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>>();
        lu_->analyzePattern(matrix_);
        lu_->factorize(matrix_);
        require(lu_->info() == Eigen::Success, ErrorKind::linear_solve_failure,
                "space-time factorization failed: " + lu_->lastErrorMessage());
    }

    [[nodiscard]] const TimeGrid& time() const { return time_; }
    [[nodiscard]] const GridDomain& domain() const { return domain_; }
    [[nodiscard]] const Eigen::SparseMatrix<double>& matrix() const { return matrix_; }

    [[nodiscard]] MfgLinearSolution solve(const GridField& mu0, const LinearSources& src = {}) const {
        const Eigen::VectorXd rhs = assemble_rhs(mu0, src);
        const Eigen::VectorXd x = lu_->solve(rhs);
        require(lu_->info() == Eigen::Success && x.allFinite(), ErrorKind::linear_solve_failure,
                "space-time solve failed");
        const std::size_t steps = time_.steps;
        MfgLinearSolution out{time_, domain_, Eigen::MatrixXd(static_cast<Eigen::Index>(steps + 1), n_),
                              Eigen::MatrixXd(static_cast<Eigen::Index>(steps + 1), n_)};
        for (std::size_t t = 0; t <= steps; ++t) {
            out.v.row(static_cast<Eigen::Index>(t)) = x.segment(col_v(t), n_).transpose();
            out.rho.row(static_cast<Eigen::Index>(t)) = x.segment(col_rho(t), n_).transpose();
        }
        return out;
    }

    /// Max-norm residual of every equation row for a candidate solution.
    [[nodiscard]] double residual(const MfgLinearSolution& s, const GridField& mu0, const LinearSources& src = {},
                                  bool include_terminal = true) const {
        Eigen::VectorXd x(matrix_.cols());
        for (std::size_t t = 0; t <= time_.steps; ++t) {
            x.segment(col_v(t), n_) = s.v.row(static_cast<Eigen::Index>(t)).transpose();
            x.segment(col_rho(t), n_) = s.rho.row(static_cast<Eigen::Index>(t)).transpose();
        }
        Eigen::VectorXd r = matrix_ * x - assemble_rhs(mu0, src);
        if (!include_terminal) r.segment(row_terminal(), n_).setZero();
        return r.cwiseAbs().maxCoeff();
    }

private:
    [[nodiscard]] Eigen::Index col_v(std::size_t t) const { return static_cast<Eigen::Index>(2 * t) * n_; }
    [[nodiscard]] Eigen::Index col_rho(std::size_t t) const { return static_cast<Eigen::Index>(2 * t + 1) * n_; }
    [[nodiscard]] Eigen::Index row_fp(std::size_t t) const { return static_cast<Eigen::Index>(1 + 2 * t) * n_; }
    [[nodiscard]] Eigen::Index row_hjb(std::size_t t) const { return static_cast<Eigen::Index>(2 + 2 * t) * n_; }
    [[nodiscard]] Eigen::Index row_terminal() const { return static_cast<Eigen::Index>(1 + 2 * time_.steps) * n_; }

    [[nodiscard]] Eigen::VectorXd assemble_rhs(const GridField& mu0, const LinearSources& src) const {
        require_same_domain(mu0.domain, domain_);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(matrix_.rows());
        rhs.segment(0, n_) = mu0.values;
        const Eigen::Index steps = static_cast<Eigen::Index>(time_.steps);
        if (src.hjb.size() > 0) {
            require(src.hjb.rows() == steps && src.hjb.cols() == n_, ErrorKind::invalid_argument, "bad HJB source shape");
            for (std::size_t t = 0; t < time_.steps; ++t)
                rhs.segment(row_hjb(t), n_) = src.hjb.row(static_cast<Eigen::Index>(t)).transpose();
        }
        if (src.fp.size() > 0) {
            require(src.fp.rows() == steps && src.fp.cols() == n_, ErrorKind::invalid_argument, "bad FP source shape");
            for (std::size_t t = 0; t < time_.steps; ++t)
                rhs.segment(row_fp(t), n_) = src.fp.row(static_cast<Eigen::Index>(t)).transpose();
        }
        if (src.terminal.size() > 0) rhs.segment(row_terminal(), n_) = src.terminal;
        return rhs;
    }

    TimeGrid time_;
    GridDomain domain_;
    Eigen::Index n_ = 0;
    Eigen::SparseMatrix<double> matrix_;
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>> lu_;
};

inline MfgLinearSolution mfg_linearized(const MfgSolution& base, const Hamiltonian& H, const LocalCost& F,
                                        const MfgTerminal& G, const GridField& mu0, const LinearSources& src = {}) {
    return LinearizedMfg(base, H, F, G).solve(mu0, src);
}

inline MfgLinearSolution mfg_linearized(const StaticSolution& base, const Hamiltonian& H, const LocalCost& F,
                                        const MfgTerminal& G, const GridField& mu0, const TimeGrid& tg,
                                        const LinearSources& src = {}) {
    return mfg_linearized(quasi_static_path(base, tg), H, F, G, mu0, src);
}

struct EnergyIdentity {
    double lhs = 0.0;
    double rhs = 0.0;
};

/// lhs = <v, rho>(T) - <v, rho>(0); rhs = sum_n dt [ -<K rho, rho> + <v, C v> ]
/// at time midpoints, with <v, C v> = -sum_e h c_e |grad v|^2. Exact for the
/// Crank-Nicolson linearization around a static base.
inline EnergyIdentity energy_identity_check(const StaticSolution& base, const Hamiltonian& H, const LocalCost& F,
                                            const MfgLinearSolution& lin) {
    const GridDomain& d = lin.domain;
    const std::size_t steps = lin.time.steps;
    const double dt = lin.time.dt();
    const Eigen::VectorXd k = F.derivative(base.m0.density());
    const TriOperator c = control_operator(d, H, base.u0.values, base.m0.density());
    EnergyIdentity e;
    const Eigen::Index last = static_cast<Eigen::Index>(steps);
    e.lhs = d.inner(lin.v.row(last).transpose(), lin.rho.row(last).transpose()) -
            d.inner(lin.v.row(0).transpose(), lin.rho.row(0).transpose());
    for (Eigen::Index n = 0; n < last; ++n) {
        const Eigen::VectorXd vb = 0.5 * (lin.v.row(n) + lin.v.row(n + 1)).transpose();
        const Eigen::VectorXd rb = 0.5 * (lin.rho.row(n) + lin.rho.row(n + 1)).transpose();
        e.rhs += dt * (-d.inner(k.cwiseProduct(rb), rb) + d.inner(vb, c.apply(vb)));
    }
    return e;
}

struct QuasiStaticLinearized {
    double eta = 0.0;
    GridField v;
    GridField rho;
    double residual = 0.0;
    /// Smallest over 8-cell windows of the window maximum of |rho|.
    double min_window_max = 0.0;
};

/// Stationary linear system for (eta, v, rho):
///   eta - Lap v + B v - K rho = 0,  L rho + C v = 0,  int rho = 1,  int v = 0.
inline QuasiStaticLinearized quasi_static_linearized(const Hamiltonian& H, const LocalCost& F, const StaticSolution& base) {
    const GridDomain& d = base.u0.domain;
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    const Eigen::VectorXd& w = d.weights();
    const Eigen::VectorXd& m0 = base.m0.density();
    TriOperator a = laplacian(d).shifted(0.0, -1.0);
    a += hamiltonian_jacobian(d, H, base.u0.values);
    const Eigen::VectorXd k = F.derivative(m0);
    const Eigen::MatrixXd l = fp_operator(d, H, base.u0.values).dense();
    const Eigen::MatrixXd c = control_operator(d, H, base.u0.values, m0).dense();
    // Unknowns [eta, v, rho].
    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(2 * n + 2, 2 * n + 1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * n + 2);
    sys.block(0, 0, n, 1).setOnes();
    sys.block(0, 1, n, n) = a.dense();
    sys.block(0, 1 + n, n, n) = -k.asDiagonal().toDenseMatrix();
    sys.block(n, 1, n, n) = c;
    sys.block(n, 1 + n, n, n) = l;
    sys.block(2 * n, 1 + n, 1, n) = w.transpose();
    rhs[2 * n] = 1.0;
    sys.block(2 * n + 1, 1, 1, n) = w.transpose();
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sys);
    require(qr.rank() == 2 * n + 1, ErrorKind::singular_system,
            "stationary linearized system has rank " + std::to_string(qr.rank()) + " < " + std::to_string(2 * n + 1));
    const Eigen::VectorXd x = qr.solve(rhs);
    QuasiStaticLinearized out{x[0], GridField(d, x.segment(1, n)), GridField(d, x.segment(1 + n, n)), 0.0, 0.0};
    out.residual = (sys * x - rhs).cwiseAbs().maxCoeff();
    const std::size_t nn = d.size();
    const std::size_t windows = d.periodic() ? nn : nn - 7;
    double worst = INFINITY;
    for (std::size_t s = 0; s < windows; ++s) {
        double best = 0.0;
        for (std::size_t j = 0; j < 8; ++j) best = std::max(best, std::abs(out.rho[(s + j) % nn]));
        worst = std::min(worst, best);
    }
    out.min_window_max = worst;
    return out;
}

/// (v + eta (T - t), rho) substituted into the time-dependent linearized
/// system around the quasi-static base; terminal rows are excluded.
inline double quasi_static_extension_residual(const QuasiStaticLinearized& q, const StaticSolution& base,
                                              const Hamiltonian& H, const LocalCost& F, const MfgTerminal& G,
                                              const TimeGrid& tg) {
    const LinearizedMfg sys(quasi_static_path(base, tg), H, F, G);
    const Eigen::Index rows = static_cast<Eigen::Index>(tg.steps + 1);
    MfgLinearSolution s{tg, q.v.domain, Eigen::MatrixXd(rows, static_cast<Eigen::Index>(q.v.size())),
                        q.rho.values.transpose().replicate(rows, 1)};
    for (Eigen::Index t = 0; t < rows; ++t)
        s.v.row(t) = (q.v.values.array() + q.eta * (tg.T - tg.time(static_cast<std::size_t>(t)))).matrix().transpose();
    return sys.residual(s, q.rho, {}, false);
}

} // namespace mil
