#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/parallel.hpp"
#include "mil/pdesolve.hpp"
#include "mil/wcalculus.hpp"

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

/// Running cost F(t, m) of the control problem.
struct RunningCost {
    std::function<double(double, const GridField&)> evaluate;
    bool time_dependent = false;
    /// Optional unnormalized flat derivative kernel y -> dF/dm(t, m, y).
    std::function<GridField(double, const GridField&)> derivative;

    double operator()(double t, const GridField& m) const { return evaluate(t, m); }

    static RunningCost zero() {
        return {[](double, const GridField&) { return 0.0; }, false,
                [](double, const GridField& m) { return GridField(m.domain); }};
    }
    static RunningCost constant(double c) {
        return {[c](double, const GridField&) { return c; }, false,
                [](double, const GridField& m) { return GridField(m.domain); }};
    }
    /// F(t, m) = g(t).
    static RunningCost time_profile(std::function<double(double)> g) {
        return {[g](double t, const GridField&) { return g(t); }, true,
                [](double, const GridField& m) { return GridField(m.domain); }};
    }
    /// F(m) = int psi dm.
    static RunningCost linear(GridField psi) {
        return {[psi](double, const GridField& m) { return inner(psi, m); }, false,
                [psi](double, const GridField&) { return psi; }};
    }
    static RunningCost from_functional(Functional f) {
        return {[f](double, const GridField& m) { return f(m); }, false, {}};
    }
    static RunningCost from_analytic(const AnalyticFunctional& a) {
        return {[a](double, const GridField& m) { return a(m); }, false,
                [a](double, const GridField& m) { return a.first_derivative(m); }};
    }
};

/// Terminal cost G(m).
struct TerminalCost {
    std::function<double(const GridField&)> evaluate;
    /// Optional unnormalized first derivative kernel.
    std::function<GridField(const GridField&)> derivative;
    /// Optional exact order-k tensor at m; mixed derivatives are probed otherwise.
    std::function<DerivativeTensor(const GridField&, int)> tensor;

    double operator()(const GridField& m) const { return evaluate(m); }

    static TerminalCost zero() {
        return {[](const GridField&) { return 0.0; }, [](const GridField& m) { return GridField(m.domain); },
                [](const GridField& m, int k) { return DerivativeTensor(k, m); }};
    }
    static TerminalCost linear(GridField g) {
        return {[g](const GridField& m) { return inner(g, m); }, [g](const GridField&) { return g; },
                [g](const GridField& m, int k) {
                    DerivativeTensor t(k, m);
                    if (k == 1)
                        for (std::size_t i = 0; i < t.n; ++i) t.values[i] = g[i];
                    normalize_tensor(t);
                    return t;
                }};
    }
    static TerminalCost from_analytic(const AnalyticFunctional& a) {
        return {[a](const GridField& m) { return a(m); }, [a](const GridField& m) { return a.first_derivative(m); },
                [a](const GridField& m, int k) { return a.exact_tensor(m, k); }};
    }
};

/// Measurement map m -> U(0, m) with a call counter and budget.
class DataOracle {
public:
    DataOracle(std::function<double(const GridField&)> query, std::size_t budget = static_cast<std::size_t>(-1))
        : query_(std::move(query)), budget_(budget), calls_(std::make_shared<std::atomic<std::size_t>>(0)) {}

    double operator()(const GridField& m) const {
        const std::size_t used = calls_->fetch_add(1) + 1;
        require(used <= budget_, ErrorKind::oracle_budget_exceeded,
                "oracle budget of " + std::to_string(budget_) + " calls exhausted");
        return query_(m);
    }
    [[nodiscard]] std::size_t calls() const { return calls_->load(); }
    [[nodiscard]] std::size_t budget() const { return budget_; }
    void set_budget(std::size_t b) { budget_ = b; }

private:
    std::function<double(const GridField&)> query_;
    std::size_t budget_;
    std::shared_ptr<std::atomic<std::size_t>> calls_;
};

/// U(t0, m0) = G(m(T)) + int_{t0}^T F(s, m(s)) ds with m from the
/// Fokker-Planck flow and the trapezoid rule on the time grid.
inline double dpe_value(const RunningCost& F, const TerminalCost& G, const DriftPotential& drift, const GridField& m0,
                        const TimeGrid& tg, TimeScheme scheme = TimeScheme::exponential) {
    const EvolutionField path = fp_solve(drift, m0, tg, scheme);
    const std::vector<double> tau = tg.trapezoid_weights();
    double running = 0.0;
    for (std::size_t n = 0; n <= tg.steps; ++n) running += tau[n] * F(tg.time(n), path.snapshot(n));
    const double value = G(path.final_snapshot()) + running;
    require(std::isfinite(value), ErrorKind::non_finite, "value function is not finite");
    return value;
}

inline double dpe_value(const RunningCost& F, const TerminalCost& G, const DriftPotential& drift, const GridMeasure& m0,
                        const TimeGrid& tg, TimeScheme scheme = TimeScheme::exponential) {
    return dpe_value(F, G, drift, m0.field(), tg, scheme);
}

/// Oracle backed by the forward value computation.
inline DataOracle make_dpe_oracle(RunningCost F, TerminalCost G, DriftPotential drift, TimeGrid tg,
                                  std::size_t budget = static_cast<std::size_t>(-1)) {
    return DataOracle(
        [F = std::move(F), G = std::move(G), drift = std::move(drift), tg](const GridField& m) {
            return dpe_value(F, G, drift, m, tg);
        },
        budget);
}

namespace detail {

/// <dF/dm(m), mu> with the normalized kernel (zero m-average).
inline double normalized_pairing(const std::function<GridField(const GridField&)>& kernel,
                                 const std::function<double(const GridField&)>& value, const GridField& m,
                                 const GridField& mu) {
    const double mass = m.mass();
    require(std::abs(mass) > 1e-14, ErrorKind::invalid_argument, "base has zero mass");
    if (kernel) {
        const GridField k = kernel(m);
        return inner(k, mu) - inner(k, m) * mu.mass() / mass;
    }
    const GridField dir = mu - (mu.mass() / mass) * m;
    const Functional f{value, false};
    const GridField dirs[1] = {dir};
    return mixed_directional_derivative(f, m, dirs);
}

} // namespace detail

struct DpeLinearization {
    std::vector<double> v; ///< v(t_n), n = 0..M
    EvolutionField mu;
};

/// Linearized value v(t) = int_t^T <dF/dm(s, m(s)), mu(s)> ds + <dG/dm(m(T)), mu(T)>.
inline DpeLinearization dpe_linearized(const RunningCost& F, const TerminalCost& G, const DriftPotential& drift,
                                       const GridField& m0, const GridField& mu0, const TimeGrid& tg,
                                       TimeScheme scheme = TimeScheme::exponential) {
    const EvolutionField m = fp_solve(drift, m0, tg, scheme);
    EvolutionField mu = fp_solve(drift, mu0, tg, scheme);
    const std::size_t steps = tg.steps;
    std::vector<double> pair(steps + 1);
    for (std::size_t n = 0; n <= steps; ++n) {
        const double t = tg.time(n);
        std::function<GridField(const GridField&)> kernel;
        if (F.derivative) kernel = [&F, t](const GridField& x) { return F.derivative(t, x); };
        pair[n] = detail::normalized_pairing(kernel, [&F, t](const GridField& x) { return F(t, x); }, m.snapshot(n),
                                             mu.snapshot(n));
    }
    std::vector<double> v(steps + 1);
    v[steps] = detail::normalized_pairing(G.derivative, G.evaluate, m.final_snapshot(), mu.final_snapshot());
    const double dt = tg.dt();
    for (std::size_t n = steps; n-- > 0;) v[n] = v[n + 1] + 0.5 * dt * (pair[n] + pair[n + 1]);
    return {std::move(v), std::move(mu)};
}

/// Fundamental solution y -> S(t0, m0, y): the linearized value along each
/// unit-mass spike, normalized to zero m0-average.
inline GridField delta_U_field(const RunningCost& F, const TerminalCost& G, const DriftPotential& drift,
                               const GridField& m0, const TimeGrid& tg, std::size_t threads = 1) {
    const GridDomain& d = m0.domain;
    const std::size_t n = d.size();
    GridField s(d);
    parallel_for(n, threads, [&](std::size_t y) {
        s[y] = dpe_linearized(F, G, drift, m0, GridField::spike(d, y), tg).v.front();
    });
    const double avg = inner(s, m0) / m0.mass();
    s.values.array() -= avg;
    return s;
}

/// (1 - e^{-L T}) / L, continuous in L = 0.
inline double continuous_weight(double lambda, double horizon) {
    const double x = lambda * horizon;
    if (std::abs(lambda) < 1e-8) return horizon * (1.0 - 0.5 * x + x * x / 6.0);
    return -std::expm1(-x) / lambda;
}

/// Trapezoid analogue sum_n tau_n e^{-L t_n} on the time grid (t measured from t0).
inline double discrete_weight(double lambda, const TimeGrid& tg) {
    const std::vector<double> tau = tg.trapezoid_weights();
    double s = 0.0;
    for (std::size_t n = 0; n <= tg.steps; ++n) s += tau[n] * std::exp(-lambda * (tg.time(n) - tg.t0));
    return s;
}

struct ModeCoefficient {
    std::vector<std::size_t> modes;
    double lambda_sum = 0.0;
    double coefficient = 0.0;
};

struct TaylorCoefficients {
    GridMeasure base;
    double order0 = 0.0;
    std::map<int, DerivativeTensor> tensors;
    std::map<int, std::vector<ModeCoefficient>> per_mode;
    std::size_t oracle_calls = 0;
};

struct DpeRecoveryOptions {
    /// Largest admissible ratio between the biggest coefficient touching the
    /// top mode pair and the biggest coefficient overall.
    double mode_tail_tol = 1e-2;
    /// Base quotient step; divided by the order.
    double step = 1e-2;
    std::size_t threads = 1;
};

namespace detail {

/// Sorted multi-indices over modes 1..K-1.
inline std::vector<std::vector<std::size_t>> mode_tuples(std::size_t k_modes, int order) {
    std::vector<std::vector<std::size_t>> out;
    for (auto t : sorted_tuples(k_modes - 1, order)) {
        for (auto& i : t) ++i;
        out.push_back(std::move(t));
    }
    return out;
}

/// Contracts a symmetric coefficient array over modes (dim^k, row-major) with
/// the dual fields along every axis.
inline DerivativeTensor assemble_dual_tensor(const GridField& base, int order, const std::vector<double>& coeff,
                                             std::size_t dim, const std::vector<const GridField*>& duals) {
    const std::size_t n = base.size();
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) basis.col(static_cast<Eigen::Index>(j)) = duals[j]->values;
    // Replace mode axes by grid axes one at a time, keeping row-major layout.
    std::vector<double> cur = coeff;
    std::vector<std::size_t> shape(static_cast<std::size_t>(order), dim);
    for (int a = 0; a < order; ++a) {
        std::size_t outer = 1, inner_len = 1;
        for (int b = 0; b < a; ++b) outer *= shape[static_cast<std::size_t>(b)];
        for (int b = a + 1; b < order; ++b) inner_len *= shape[static_cast<std::size_t>(b)];
        std::vector<double> next(outer * n * inner_len, 0.0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < dim; ++j)
                for (std::size_t i = 0; i < n; ++i) {
                    const double bij = basis(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    const double* src = &cur[(o * dim + j) * inner_len];
                    double* dst = &next[(o * n + i) * inner_len];
                    for (std::size_t r = 0; r < inner_len; ++r) dst[r] += bij * src[r];
                }
        cur = std::move(next);
        shape[static_cast<std::size_t>(a)] = n;
    }
    DerivativeTensor t(order, base);
    t.values = std::move(cur);
    return t;
}

inline double terminal_mixed(const TerminalCost& G, const GridField& m, std::span<const GridField> dirs) {
    if (G.tensor) return G.tensor(m, static_cast<int>(dirs.size())).contract(dirs);
    return mixed_directional_derivative(Functional{G.evaluate, false}, m, dirs);
}

} // namespace detail

/// Progressive reconstruction of a time-independent running cost at the
/// stationary measure from value-function data, order by order, using
/// Fokker-Planck eigen-directions.
inline TaylorCoefficients recover_dpe_cost(const DataOracle& oracle, const TerminalCost& G, const DriftPotential& drift,
                                           int kmax, std::size_t k_modes, const TimeGrid& tg,
                                           const DpeRecoveryOptions& opt = {}) {
    require(kmax >= 0, ErrorKind::invalid_argument, "kmax must be >= 0");
    require(tg.t0 == 0.0, ErrorKind::invalid_argument, "data are U(0, m); the time grid must start at 0");
    const std::size_t calls_before = oracle.calls();
    const GridMeasure base = stationary_measure(drift);
    const GridField& mh = base.field();
    const double horizon = tg.T - tg.t0;
    TaylorCoefficients out{base, (oracle(mh) - G(mh)) / horizon, {}, {}, 0};
    if (kmax == 0) {
        out.oracle_calls = oracle.calls() - calls_before;
        return out;
    }
    require(k_modes >= 2, ErrorKind::mode_deficiency, "need at least one non-stationary mode");
    const EigenSystem es = fp_eigensystem(drift, k_modes);
    const Functional data{[&oracle](const GridField& m) { return oracle(m); }, false};
    const double min_base = mh.values.minCoeff();
    double max_e = 0.0;
    for (std::size_t j = 1; j < k_modes; ++j) max_e = std::max(max_e, es.E[j].values.cwiseAbs().maxCoeff());

    for (int k = 1; k <= kmax; ++k) {
        const auto tuples = detail::mode_tuples(k_modes, k);
        // Corner measures stay positive: k * step * max|E| <= min m_hat / 2.
        const double step = std::min(opt.step / k, 0.5 * min_base / (k * max_e));
        ProbeOptions po;
        po.step = step;
        std::vector<ModeCoefficient> coeffs(tuples.size());
        parallel_for(tuples.size(), opt.threads, [&](std::size_t q) {
            std::vector<GridField> dirs;
            double lam = 0.0;
            for (std::size_t j : tuples[q]) {
                dirs.push_back(es.E[j]);
                lam += es.lambda[j];
            }
            const double d = mixed_directional_derivative(data, mh, dirs, po);
            const double g = detail::terminal_mixed(G, mh, dirs);
            const double w = discrete_weight(lam, tg);
            coeffs[q] = {tuples[q], lam, (d - std::exp(-lam * horizon) * g) / w};
        });

        // Tail check on the top degenerate pair.
        double biggest = 0.0, tail = 0.0;
        const std::size_t top = k_modes - 1;
        const double lam_top = es.lambda[top];
        for (const auto& c : coeffs) {
            biggest = std::max(biggest, std::abs(c.coefficient));
            bool touches = false;
            for (std::size_t j : c.modes)
                touches = touches || std::abs(es.lambda[j] - lam_top) <= 1e-7 * std::max(1.0, lam_top);
            if (touches) tail = std::max(tail, std::abs(c.coefficient));
        }
        require(biggest <= 1e-12 || tail <= opt.mode_tail_tol * biggest, ErrorKind::mode_deficiency,
                "order " + std::to_string(k) + ": top-mode coefficient ratio " + std::to_string(tail / biggest) +
                    " exceeds " + std::to_string(opt.mode_tail_tol) + "; increase the mode count");

        // Symmetric coefficient array over modes 1..K-1.
        const std::size_t dim = k_modes - 1;
        std::size_t total = 1;
        for (int a = 0; a < k; ++a) total *= dim;
        std::vector<double> carr(total, 0.0);
        for (const auto& c : coeffs) {
            std::vector<std::size_t> idx(c.modes);
            for (auto& i : idx) --i;
            std::sort(idx.begin(), idx.end());
            do {
                std::size_t f = 0;
                for (std::size_t i : idx) f = f * dim + i;
                carr[f] = c.coefficient;
            } while (std::next_permutation(idx.begin(), idx.end()));
        }
        std::vector<const GridField*> duals;
        for (std::size_t j = 1; j < k_modes; ++j) duals.push_back(&es.E_dual[j]);
        DerivativeTensor t = detail::assemble_dual_tensor(mh, k, carr, dim, duals);
        normalize_tensor(t);
        out.tensors.emplace(k, std::move(t));
        out.per_mode.emplace(k, std::move(coeffs));
    }
    out.oracle_calls = oracle.calls() - calls_before;
    return out;
}

struct NonuniquenessResult {
    double data_gap = 0.0;
    double cost_gap = 0.0;
};

/// Two time-dependent running costs F_i(t, m) = g_i(t) compared through their
/// value-function data on a set of probe measures.
inline NonuniquenessResult nonuniqueness_demo(const std::function<double(double)>& g1,
                                              const std::function<double(double)>& g2, const TimeGrid& tg,
                                              const DriftPotential& drift, std::span<const GridField> probes) {
    const RunningCost f1 = RunningCost::time_profile(g1), f2 = RunningCost::time_profile(g2);
    const TerminalCost g0 = TerminalCost::zero();
    NonuniquenessResult r;
    for (const auto& m : probes)
        r.data_gap = std::max(r.data_gap, std::abs(dpe_value(f1, g0, drift, m, tg) - dpe_value(f2, g0, drift, m, tg)));
    for (std::size_t n = 0; n <= tg.steps; ++n) r.cost_gap = std::max(r.cost_gap, std::abs(g1(tg.time(n)) - g2(tg.time(n))));
    return r;
}

} // namespace mil
