#pragma once

// Independent reference computations used by the test suites.

#include "mil/grid.hpp"
#include "mil/linalg.hpp"
#include "mil/wcalculus.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using mil::GridDomain;
using mil::GridField;

/// Ground distance between nodes: circular on the torus.
inline double node_distance(const GridDomain& d, std::size_t i, std::size_t j) {
    const double dx = std::abs(d.x(i) - d.x(j));
    return d.periodic() ? std::min(dx, 1.0 - dx) : dx;
}

/// Optimal transport cost between the positive and negative parts of
/// w (m1 - m2), by successive shortest paths on the bipartite transport graph.
inline double transport_w1(const GridDomain& d, const Eigen::VectorXd& m1, const Eigen::VectorXd& m2) {
    const std::size_t n = d.size();
    std::vector<double> supply(n), demand(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = d.weight(i) * (m1[static_cast<Eigen::Index>(i)] - m2[static_cast<Eigen::Index>(i)]);
        supply[i] = std::max(e, 0.0);
        demand[i] = std::max(-e, 0.0);
    }
    struct Edge {
        std::size_t to, rev;
        double cap, cost;
    };
    const std::size_t s = 0, t = 2 * n + 1, nodes = 2 * n + 2;
    std::vector<std::vector<Edge>> g(nodes);
    auto add = [&](std::size_t a, std::size_t b, double cap, double cost) {
        g[a].push_back({b, g[b].size(), cap, cost});
        g[b].push_back({a, g[a].size() - 1, 0.0, -cost});
    };
    const double inf = std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        add(s, 1 + i, supply[i], 0.0);
        add(1 + n + i, t, demand[i], 0.0);
        total += supply[i];
        for (std::size_t j = 0; j < n; ++j) add(1 + i, 1 + n + j, inf, node_distance(d, i, j));
    }
    const double eps = 1e-15;
    double sent = 0.0, cost = 0.0;
    while (sent < total - 1e-13) {
        std::vector<double> dist(nodes, inf);
        std::vector<std::size_t> pv(nodes, nodes), pe(nodes, 0);
        dist[s] = 0.0;
        for (std::size_t round = 0; round < nodes; ++round) {
            bool changed = false;
            for (std::size_t u = 0; u < nodes; ++u) {
                if (dist[u] == inf) continue;
                for (std::size_t k = 0; k < g[u].size(); ++k) {
                    const Edge& e = g[u][k];
                    if (e.cap > eps && dist[u] + e.cost < dist[e.to] - 1e-15) {
                        dist[e.to] = dist[u] + e.cost;
                        pv[e.to] = u;
                        pe[e.to] = k;
                        changed = true;
                    }
                }
            }
            if (!changed) break;
        }
        if (dist[t] == inf) break;
        double push = inf;
        for (std::size_t v = t; v != s; v = pv[v]) push = std::min(push, g[pv[v]][pe[v]].cap);
        for (std::size_t v = t; v != s; v = pv[v]) {
            Edge& e = g[pv[v]][pe[v]];
            e.cap -= push;
            g[v][e.rev].cap += push;
        }
        sent += push;
        cost += push * dist[t];
    }
    return cost;
}

/// Ergodic quadratic MFG with unit kappa on the torus by Hopf-Cole:
/// u = -2 log phi for the ground state of -Lap + F0/2, gamma = 2 lambda0.
struct HopfCole {
    double gamma = 0.0;
    Eigen::VectorXd u;
    Eigen::VectorXd m;
};

inline HopfCole hopf_cole_static(const GridDomain& d, const Eigen::VectorXd& f0) {
    Eigen::MatrixXd a = -mil::laplacian(d).dense();
    a += (0.5 * f0).asDiagonal();
    // Symmetrise with the quadrature weights (identity on the uniform torus).
    const Eigen::VectorXd sw = d.weights().cwiseSqrt();
    const Eigen::MatrixXd s = sw.asDiagonal() * a * sw.cwiseInverse().asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
    Eigen::VectorXd phi = sw.cwiseInverse().cwiseProduct(es.eigenvectors().col(0));
    if (phi.sum() < 0) phi = -phi;
    HopfCole out;
    out.gamma = 2.0 * es.eigenvalues()[0];
    out.u = -2.0 * phi.array().log().matrix();
    out.u.array() -= d.integrate(out.u) / d.weights().sum();
    out.m = (-out.u.array()).exp().matrix();
    out.m /= d.integrate(out.m);
    return out;
}

/// F(m) = <a, m> + 1/2 <m, B m> in quadrature, differentiated by hand.
struct QuadraticFunctional {
    GridField a;
    Eigen::MatrixXd B;

    double operator()(const GridField& m) const {
        const Eigen::VectorXd wm = m.domain.weights().cwiseProduct(m.values);
        return a.values.dot(wm) + 0.5 * wm.dot(B * wm);
    }
    mil::Functional functional() const {
        return {[self = *this](const GridField& m) { return self(m); }, false};
    }
    mil::DerivativeTensor first(const GridField& m) const {
        mil::DerivativeTensor t(1, m);
        const Eigen::VectorXd k = a.values + B * m.domain.weights().cwiseProduct(m.values);
        for (std::size_t i = 0; i < m.size(); ++i) t.values[i] = k[static_cast<Eigen::Index>(i)];
        mil::normalize_tensor(t);
        return t;
    }
    mil::DerivativeTensor second(const GridField& m) const {
        mil::DerivativeTensor t(2, m);
        for (std::size_t i = 0; i < m.size(); ++i)
            for (std::size_t j = 0; j < m.size(); ++j)
                t.values[i * m.size() + j] = B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        mil::normalize_tensor(t);
        return t;
    }
};

inline QuadraticFunctional random_quadratic(const GridDomain& d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    GridField a(d);
    for (std::size_t i = 0; i < d.size(); ++i) a[i] = g(rng);
    Eigen::MatrixXd b(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) b(i, j) = g(rng);
    return {a, 0.5 * (b + b.transpose())};
}

/// Positive smooth density with random low-frequency content, unit mass.
inline GridField random_density(const GridDomain& d, std::mt19937_64& rng, double amp = 0.3) {
    std::uniform_real_distribution<double> u(-amp, amp);
    const double c1 = u(rng), s1 = u(rng), c2 = u(rng), s2 = u(rng);
    const double p = d.periodic() ? 1.0 : 0.5;
    GridField f = GridField::from_function(d, [&](double x) {
        const double a = mil::two_pi * p * x;
        return 1.0 + c1 * std::cos(a) + s1 * std::sin(a) + c2 * std::cos(2 * a) + s2 * std::sin(2 * a);
    });
    f *= 1.0 / f.mass();
    return f;
}

/// Zero-mass signed direction.
inline GridField random_direction(const GridDomain& d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    double c[3], s[3];
    for (int k = 0; k < 3; ++k) {
        c[k] = g(rng);
        s[k] = g(rng);
    }
    GridField f = GridField::from_function(d, [&](double x) {
        double v = 0.0;
        for (int k = 0; k < 3; ++k) v += c[k] * std::cos(mil::two_pi * (k + 1) * x) + s[k] * std::sin(mil::two_pi * (k + 1) * x);
        return v;
    });
    f.values.array() -= f.mass() / d.weights().sum();
    return f;
}

} // namespace oracle
