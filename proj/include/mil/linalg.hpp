#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <vector>

namespace mil {

/// Three-point operator (Lx)_i = lower_i x_{i-1} + diag_i x_i + upper_i x_{i+1}.
/// On the torus neighbours wrap; on the interval lower_0 and upper_{N-1} are unused.
struct TriOperator {
    GridDomain domain;
    Eigen::VectorXd lower, diag, upper;

    explicit TriOperator(GridDomain d)
        : domain(std::move(d)),
          lower(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain.size()))),
          diag(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain.size()))),
          upper(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain.size()))) {}

    [[nodiscard]] Eigen::Index n() const { return static_cast<Eigen::Index>(domain.size()); }

    [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
        const Eigen::Index n = this->n();
        Eigen::VectorXd y(n);
        const bool wrap = domain.periodic();
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = diag[i] * x[i];
            if (i > 0) s += lower[i] * x[i - 1];
            else if (wrap) s += lower[i] * x[n - 1];
            if (i + 1 < n) s += upper[i] * x[i + 1];
            else if (wrap) s += upper[i] * x[0];
            y[i] = s;
        }
        return y;
    }

    [[nodiscard]] Eigen::MatrixXd dense() const {
        const Eigen::Index n = this->n();
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            a(i, i) += diag[i];
            if (i > 0) a(i, i - 1) += lower[i];
            else if (domain.periodic()) a(i, n - 1) += lower[i];
            if (i + 1 < n) a(i, i + 1) += upper[i];
            else if (domain.periodic()) a(i, 0) += upper[i];
        }
        return a;
    }

    /// alpha*I + beta*L as a new operator.
    [[nodiscard]] TriOperator shifted(double alpha, double beta) const {
        TriOperator out(domain);
        out.lower = beta * lower;
        out.diag = beta * diag + Eigen::VectorXd::Constant(n(), alpha);
        out.upper = beta * upper;
        return out;
    }

    TriOperator& operator+=(const TriOperator& o) {
        lower += o.lower;
        diag += o.diag;
        upper += o.upper;
        return *this;
    }
};

namespace detail {

inline Eigen::VectorXd thomas(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                              const Eigen::VectorXd& r) {
    const Eigen::Index n = b.size();
    Eigen::VectorXd cp(n), dp(n), x(n);
    double piv = b[0];
    require(std::abs(piv) > 1e-300, ErrorKind::linear_solve_failure, "zero pivot in tridiagonal solve");
    cp[0] = c[0] / piv;
    dp[0] = r[0] / piv;
    for (Eigen::Index i = 1; i < n; ++i) {
        piv = b[i] - a[i] * cp[i - 1];
        require(std::abs(piv) > 1e-300 && std::isfinite(piv), ErrorKind::linear_solve_failure,
                "zero pivot in tridiagonal solve");
        cp[i] = c[i] / piv;
        dp[i] = (r[i] - a[i] * dp[i - 1]) / piv;
    }
    x[n - 1] = dp[n - 1];
    for (Eigen::Index i = n - 2; i >= 0; --i) x[i] = dp[i] - cp[i] * x[i + 1];
    return x;
}

} // namespace detail

/// Solves op * x = rhs (cyclic systems via Sherman-Morrison).
inline Eigen::VectorXd solve(const TriOperator& op, const Eigen::VectorXd& rhs) {
    const Eigen::Index n = op.n();
    Eigen::VectorXd a = op.lower, b = op.diag, c = op.upper;
    if (!op.domain.periodic()) {
        a[0] = 0.0;
        c[n - 1] = 0.0;
        Eigen::VectorXd x = detail::thomas(a, b, c, rhs);
        require(x.allFinite(), ErrorKind::linear_solve_failure, "non-finite tridiagonal solution");
        return x;
    }
    const double alpha = c[n - 1]; // row n-1, column 0
    const double beta = a[0];      // row 0, column n-1
    const double gamma = -b[0];
    Eigen::VectorXd bb = b;
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    a[0] = 0.0;
    c[n - 1] = 0.0;
    const Eigen::VectorXd x = detail::thomas(a, bb, c, rhs);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    u[0] = gamma;
    u[n - 1] = alpha;
    const Eigen::VectorXd z = detail::thomas(a, bb, c, u);
    const double den = 1.0 + z[0] + beta * z[n - 1] / gamma;
    require(std::abs(den) > 1e-300, ErrorKind::linear_solve_failure, "singular cyclic system");
    const double fact = (x[0] + beta * x[n - 1] / gamma) / den;
    Eigen::VectorXd out = x - fact * z;
    require(out.allFinite(), ErrorKind::linear_solve_failure, "non-finite cyclic solution");
    return out;
}

/// Finite-volume generator for d_t m = (F_{e} - F_{e-1}) / w with edge flux
/// F_e = m_R (1/h + push_right_e) - m_L (1/h - push_left_e).
///
/// With push_left = push_right = b/2 this is the centred flux
/// (m_R - m_L)/h + b (m_L + m_R)/2. Boundary edges are absent on the interval
/// (zero flux).
inline TriOperator flux_generator(const GridDomain& d, const Eigen::VectorXd& push_left,
                                  const Eigen::VectorXd& push_right) {
    TriOperator op(d);
    const double ih = 1.0 / d.spacing();
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        const auto li = static_cast<Eigen::Index>(l), ri = static_cast<Eigen::Index>(r);
        const double cr = ih + push_right[static_cast<Eigen::Index>(e)];
        const double cl = ih - push_left[static_cast<Eigen::Index>(e)];
        const double wl = d.weight(l), wr = d.weight(r);
        op.upper[li] += cr / wl;
        op.diag[li] -= cl / wl;
        op.diag[ri] -= cr / wr;
        op.lower[ri] += cl / wr;
    }
    return op;
}

/// FV Laplacian with zero-flux closure on the interval.
inline TriOperator laplacian(const GridDomain& d) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.edge_count()));
    return flux_generator(d, zero, zero);
}

/// Edge gradient (x_R - x_L)/h.
inline Eigen::VectorXd edge_gradient(const GridDomain& d, const Eigen::VectorXd& x) {
    Eigen::VectorXd g(static_cast<Eigen::Index>(d.edge_count()));
    const double ih = 1.0 / d.spacing();
    for (std::size_t e = 0; e < d.edge_count(); ++e) {
        const auto [l, r] = d.edge(e);
        g[static_cast<Eigen::Index>(e)] = (x[static_cast<Eigen::Index>(r)] - x[static_cast<Eigen::Index>(l)]) * ih;
    }
    return g;
}

} // namespace mil
