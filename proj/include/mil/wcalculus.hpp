#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mil {

/// Scalar functional of a (possibly signed) density grid.
struct Functional {
    std::function<double(const GridField&)> eval;
    /// When set, the functional is only defined on nonnegative densities and
    /// probing falls back to one-sided quotients.
    bool requires_positive = false;

    double operator()(const GridField& m) const { return eval(m); }
};

// ---------------------------------------------------------------------------
// Wasserstein-1

/// Kantorovich-Rubinstein distance between grid measures. Mass sits at the
/// nodes; the torus uses the circular ground metric.
inline double w1_distance(const GridMeasure& m1, const GridMeasure& m2) {
    const GridDomain& d = m1.domain();
    require_same_domain(d, m2.domain());
    const std::size_t n = d.size();
    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += d.weight(i) * (m1[i] - m2[i]);
        cdf[i] = acc;
    }
    const double h = d.spacing();
    if (!d.periodic()) {
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) total += std::abs(cdf[i]);
        return h * total;
    }
    // Optimal rotation offset is a median of the cumulative differences.
    std::vector<double> sorted = cdf;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
    const double offset = sorted[n / 2];
    double total = 0.0;
    for (double c : cdf) total += std::abs(c - offset);
    return h * total;
}

// ---------------------------------------------------------------------------
// Mixed directional derivatives

struct ProbeOptions {
    double step = 1e-3;
    bool richardson = true;
    /// Permit directions of nonzero mass.
    bool unconstrained = false;
    std::size_t threads = 1;
};

namespace detail {

enum class QuotientKind { two_sided, one_sided };

inline bool corners_nonnegative(const GridField& m, std::span<const GridField> dirs, double s, QuotientKind kind) {
    const std::size_t k = dirs.size();
    const std::size_t corners = std::size_t{1} << k;
    for (std::size_t mask = 0; mask < corners; ++mask) {
        Eigen::VectorXd p = m.values;
        for (std::size_t j = 0; j < k; ++j) {
            const bool bit = (mask >> j) & 1U;
            const double eps = kind == QuotientKind::two_sided ? (bit ? 1.0 : -1.0) : (bit ? 1.0 : 0.0);
            p += (s * eps) * dirs[j].values;
        }
        if (p.minCoeff() < 0.0) return false;
    }
    return true;
}

inline double corner_quotient(const Functional& f, const GridField& m, std::span<const GridField> dirs, double s,
                              QuotientKind kind) {
    const std::size_t k = dirs.size();
    const std::size_t corners = std::size_t{1} << k;
    double sum = 0.0;
    GridField p(m.domain);
    for (std::size_t mask = 0; mask < corners; ++mask) {
        p.values = m.values;
        int sign = 1;
        for (std::size_t j = 0; j < k; ++j) {
            const bool bit = (mask >> j) & 1U;
            double eps = 0.0;
            if (kind == QuotientKind::two_sided) {
                eps = bit ? 1.0 : -1.0;
                if (!bit) sign = -sign;
            } else {
                eps = bit ? 1.0 : 0.0;
                if (!bit) sign = -sign;
            }
            if (eps != 0.0) p.values += (s * eps) * dirs[j].values;
        }
        const double value = f(p);
        require(std::isfinite(value), ErrorKind::non_finite, "functional evaluation returned non-finite value");
        sum += sign * value;
    }
    const double denom = kind == QuotientKind::two_sided ? std::pow(2.0 * s, static_cast<double>(k))
                                                         : std::pow(s, static_cast<double>(k));
    return sum / denom;
}

} // namespace detail

/// k-th mixed directional derivative d^k/ds_1..ds_k F(m + sum s_j h_j) at 0,
/// from the alternating 2^k-corner quotient with Richardson extrapolation
/// over (step, step/2).
inline double mixed_directional_derivative(const Functional& f, const GridField& m, std::span<const GridField> dirs,
                                           const ProbeOptions& opt = {}) {
    require(!dirs.empty(), ErrorKind::invalid_argument, "need at least one direction");
    require(opt.step > 0.0, ErrorKind::invalid_argument, "step must be positive");
    for (const auto& h : dirs) {
        require_same_domain(m.domain, h.domain);
        if (!opt.unconstrained) {
            const double scale = std::max(1.0, h.values.cwiseAbs().maxCoeff());
            require(std::abs(h.mass()) <= 1e-10 * scale, ErrorKind::invalid_argument,
                    "direction has nonzero mass; set unconstrained to probe it");
        }
    }
    using detail::QuotientKind;
    QuotientKind kind = QuotientKind::two_sided;
    if (f.requires_positive) {
        if (!detail::corners_nonnegative(m, dirs, opt.step, QuotientKind::two_sided)) {
            kind = QuotientKind::one_sided;
            require(detail::corners_nonnegative(m, dirs, opt.step, QuotientKind::one_sided),
                    ErrorKind::step_too_large, "corner measure has negative density");
        }
    }
    const double coarse = detail::corner_quotient(f, m, dirs, opt.step, kind);
    if (!opt.richardson) return coarse;
    const double fine = detail::corner_quotient(f, m, dirs, 0.5 * opt.step, kind);
    return kind == QuotientKind::two_sided ? (4.0 * fine - coarse) / 3.0 : 2.0 * fine - coarse;
}

inline double mixed_directional_derivative(const Functional& f, const GridMeasure& m, std::span<const GridField> dirs,
                                           const ProbeOptions& opt = {}) {
    return mixed_directional_derivative(f, m.field(), dirs, opt);
}

// ---------------------------------------------------------------------------
// Derivative tensors

/// k-dimensional array of size N^k, row-major, holding d^kF/dm^k at a base.
struct DerivativeTensor {
    int order = 1;
    std::size_t n = 0;
    GridField base;
    std::vector<double> values;
    bool normalized = false;

    DerivativeTensor(int k, GridField b)
        : order(k), n(b.size()), base(std::move(b)),
          values(static_cast<std::size_t>(std::pow(static_cast<double>(n), k)), 0.0) {}

    [[nodiscard]] std::size_t flat_index(std::span<const std::size_t> idx) const {
        std::size_t f = 0;
        for (std::size_t i : idx) f = f * n + i;
        return f;
    }
    double& at(std::span<const std::size_t> idx) { return values[flat_index(idx)]; }
    [[nodiscard]] double at(std::span<const std::size_t> idx) const { return values[flat_index(idx)]; }

    /// Quadrature contraction against k directions.
    [[nodiscard]] double contract(std::span<const GridField> dirs) const {
        require(static_cast<int>(dirs.size()) == order, ErrorKind::invalid_argument, "direction count != order");
        const Eigen::VectorXd& w = base.domain.weights();
        std::vector<double> current(values);
        std::size_t len = values.size();
        // Contract the last axis repeatedly.
        for (int a = order - 1; a >= 0; --a) {
            const Eigen::VectorXd& d = dirs[static_cast<std::size_t>(a)].values;
            const std::size_t outer = len / n;
            std::vector<double> next(outer, 0.0);
            for (std::size_t o = 0; o < outer; ++o) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    s += current[o * n + j] * w[static_cast<Eigen::Index>(j)] * d[static_cast<Eigen::Index>(j)];
                next[o] = s;
            }
            current = std::move(next);
            len = outer;
        }
        return current[0];
    }

    /// Contraction of the first axis against a density, for every remaining index.
    [[nodiscard]] std::vector<double> first_axis_contraction(const Eigen::VectorXd& density) const {
        const std::size_t rest = values.size() / n;
        std::vector<double> out(rest, 0.0);
        const Eigen::VectorXd& w = base.domain.weights();
        for (std::size_t i = 0; i < n; ++i) {
            const double c = w[static_cast<Eigen::Index>(i)] * density[static_cast<Eigen::Index>(i)];
            for (std::size_t r = 0; r < rest; ++r) out[r] += c * values[i * rest + r];
        }
        return out;
    }

    [[nodiscard]] double max_asymmetry() const {
        if (order < 2) return 0.0;
        double worst = 0.0;
        std::vector<std::size_t> idx(static_cast<std::size_t>(order), 0);
        for (std::size_t f = 0; f < values.size(); ++f) {
            std::size_t r = f;
            for (int a = order - 1; a >= 0; --a) {
                idx[static_cast<std::size_t>(a)] = r % n;
                r /= n;
            }
            for (int a = 0; a + 1 < order; ++a) {
                auto swapped = idx;
                std::swap(swapped[static_cast<std::size_t>(a)], swapped[static_cast<std::size_t>(a + 1)]);
                worst = std::max(worst, std::abs(values[f] - at(swapped)));
            }
        }
        return worst;
    }
};

/// Centres every axis against the base density so that the contraction of
/// any axis with the base vanishes (symmetry is preserved).
inline void normalize_tensor(DerivativeTensor& t) {
    const std::size_t n = t.n;
    const Eigen::VectorXd& w = t.base.domain.weights();
    const Eigen::VectorXd& m = t.base.values;
    const double mass = t.base.mass();
    for (int axis = 0; axis < t.order; ++axis) {
        const std::size_t stride = static_cast<std::size_t>(std::pow(static_cast<double>(n), t.order - 1 - axis));
        const std::size_t block = stride * n;
        for (std::size_t start = 0; start < t.values.size(); start += block) {
            for (std::size_t s = 0; s < stride; ++s) {
                double c = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    c += w[static_cast<Eigen::Index>(i)] * m[static_cast<Eigen::Index>(i)] * t.values[start + i * stride + s];
                c /= mass;
                for (std::size_t i = 0; i < n; ++i) t.values[start + i * stride + s] -= c;
            }
        }
    }
    t.normalized = true;
}

namespace detail {

/// Visits every nondecreasing index tuple of length k over [0, n).
inline std::vector<std::vector<std::size_t>> sorted_tuples(std::size_t n, int k) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> idx(static_cast<std::size_t>(k), 0);
    while (true) {
        out.push_back(idx);
        int a = k - 1;
        while (a >= 0 && idx[static_cast<std::size_t>(a)] == n - 1) --a;
        if (a < 0) break;
        ++idx[static_cast<std::size_t>(a)];
        for (int b = a + 1; b < k; ++b) idx[static_cast<std::size_t>(b)] = idx[static_cast<std::size_t>(a)];
    }
    return out;
}

inline void scatter_symmetric(DerivativeTensor& t, std::vector<std::size_t> idx, double value) {
    std::sort(idx.begin(), idx.end());
    do {
        t.at(idx) = value;
    } while (std::next_permutation(idx.begin(), idx.end()));
}

} // namespace detail

/// Probes F with single-cell unit-mass spikes along every axis and returns
/// the normalized order-k flat derivative at m.
inline DerivativeTensor flat_derivative_field(const Functional& f, const GridField& m, int order,
                                              ProbeOptions opt = {}) {
    require(order >= 1, ErrorKind::invalid_argument, "order must be >= 1");
    opt.unconstrained = true;
    const GridDomain& d = m.domain;
    const std::size_t n = d.size();
    DerivativeTensor t(order, m);
    const auto tuples = detail::sorted_tuples(n, order);
    std::vector<double> entries(tuples.size());
    parallel_for(tuples.size(), opt.threads, [&](std::size_t q) {
        std::vector<GridField> dirs;
        dirs.reserve(tuples[q].size());
        for (std::size_t i : tuples[q]) dirs.push_back(GridField::spike(d, i));
        entries[q] = mixed_directional_derivative(f, m, dirs, opt);
    });
    for (std::size_t q = 0; q < tuples.size(); ++q) detail::scatter_symmetric(t, tuples[q], entries[q]);
    normalize_tensor(t);
    return t;
}

inline DerivativeTensor flat_derivative_field(const Functional& f, const GridMeasure& m, int order,
                                              ProbeOptions opt = {}) {
    return flat_derivative_field(f, m.field(), order, opt);
}

inline GridField tensor_as_field(const DerivativeTensor& t) {
    require(t.order == 1, ErrorKind::invalid_argument, "only order-1 tensors are fields");
    Eigen::VectorXd v(static_cast<Eigen::Index>(t.n));
    for (std::size_t i = 0; i < t.n; ++i) v[static_cast<Eigen::Index>(i)] = t.values[i];
    return {t.base.domain, std::move(v)};
}

// ---------------------------------------------------------------------------
// Taylor expansion

struct TaylorResult {
    std::vector<double> partial_sums; ///< F(m) + terms up to order j, j = 0..N-1
    double remainder = 0.0;
};

using TensorProvider = std::function<DerivativeTensor(int order)>;

/// F(m') - F(m) minus the order-(N-1) Taylor polynomial at m in the
/// direction m' - m.
inline TaylorResult taylor_remainder(const Functional& f, const GridField& m, const GridField& m_prime, int n_order,
                                     const TensorProvider& tensors) {
    require(n_order >= 1, ErrorKind::invalid_argument, "n_order must be >= 1");
    require_same_domain(m.domain, m_prime.domain);
    const GridField delta = m_prime - m;
    TaylorResult r;
    double sum = f(m);
    r.partial_sums.push_back(sum);
    double factorial = 1.0;
    for (int k = 1; k < n_order; ++k) {
        factorial *= k;
        const DerivativeTensor t = tensors(k);
        const std::vector<GridField> dirs(static_cast<std::size_t>(k), delta);
        sum += t.contract(dirs) / factorial;
        r.partial_sums.push_back(sum);
    }
    r.remainder = f(m_prime) - sum;
    return r;
}

inline TaylorResult taylor_remainder(const Functional& f, const GridField& m, const GridField& m_prime, int n_order,
                                     const ProbeOptions& opt = {}) {
    return taylor_remainder(f, m, m_prime, n_order,
                            [&](int k) { return flat_derivative_field(f, m, k, opt); });
}

// ---------------------------------------------------------------------------
// Analytic functionals F(m) = sum_z w_z Phi(z, (rho*m)(z))

/// Phi(z, theta) together with its theta-partials up to max_order.
struct PhiSpec {
    std::string name;
    int max_order = 0;
    std::function<double(double z, double theta, int order)> eval;
};

inline PhiSpec phi_linear() {
    return {"linear", 64, [](double, double th, int k) { return k == 0 ? th : (k == 1 ? 1.0 : 0.0); }};
}
inline PhiSpec phi_square() {
    return {"square", 64, [](double, double th, int k) {
                return k == 0 ? th * th : (k == 1 ? 2.0 * th : (k == 2 ? 2.0 : 0.0));
            }};
}
inline PhiSpec phi_half_square() {
    return {"half_square", 64, [](double, double th, int k) {
                return k == 0 ? 0.5 * th * th : (k == 1 ? th : (k == 2 ? 1.0 : 0.0));
            }};
}
inline PhiSpec phi_exp() {
    return {"exp", 64, [](double, double th, int) { return std::exp(th); }};
}

/// Wrapped Gaussian bump on the unit torus, unit integral.
inline double wrapped_gaussian(double x, double width) {
    double s = 0.0;
    for (int k = -4; k <= 4; ++k) {
        const double y = x - k;
        s += std::exp(-0.5 * y * y / (width * width));
    }
    return s / (width * std::sqrt(two_pi));
}

class AnalyticFunctional {
public:
    AnalyticFunctional(PhiSpec phi, GridField kernel) : phi_(std::move(phi)), kernel_(std::move(kernel)) {
        require(kernel_.domain.periodic(), ErrorKind::invalid_argument, "convolution kernel needs the torus");
    }

    [[nodiscard]] const GridDomain& domain() const { return kernel_.domain; }
    [[nodiscard]] const PhiSpec& phi() const { return phi_; }

    /// rho(x_i - x_j) with periodic offsets.
    [[nodiscard]] double rho(std::size_t i, std::size_t j) const {
        const std::size_t n = kernel_.size();
        return kernel_[(i + n - j) % n];
    }

    /// theta(z_j) = sum_i w_i rho(y_i - z_j) m_i.
    [[nodiscard]] Eigen::VectorXd convolve(const GridField& m) const {
        const std::size_t n = kernel_.size();
        const GridDomain& d = kernel_.domain;
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += d.weight(i) * rho(i, j) * m[i];
            theta[static_cast<Eigen::Index>(j)] = s;
        }
        return theta;
    }

    double operator()(const GridField& m) const {
        require_same_domain(m.domain, kernel_.domain);
        const Eigen::VectorXd theta = convolve(m);
        const GridDomain& d = kernel_.domain;
        double s = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) s += d.weight(j) * phi_.eval(d.x(j), theta[static_cast<Eigen::Index>(j)], 0);
        return s;
    }

    [[nodiscard]] Functional as_functional() const {
        return {[self = *this](const GridField& m) { return self(m); }, false};
    }

    /// Unnormalized d^kF/dm^k(m, y_idx[0], ..., y_idx[k-1]).
    [[nodiscard]] double exact_derivative(const GridField& m, int k, std::span<const std::size_t> idx) const {
        require(k >= 1 && static_cast<int>(idx.size()) == k, ErrorKind::invalid_argument, "index tuple length != order");
        require(k <= phi_.max_order, ErrorKind::order_unavailable,
                phi_.name + " has no theta-partial of order " + std::to_string(k));
        const Eigen::VectorXd theta = convolve(m);
        return derivative_from_theta(theta, k, idx);
    }

    /// Full tensor (normalized) from the closed-form derivative formulas.
    [[nodiscard]] DerivativeTensor exact_tensor(const GridField& m, int k, bool normalize = true) const {
        require(k <= phi_.max_order, ErrorKind::order_unavailable,
                phi_.name + " has no theta-partial of order " + std::to_string(k));
        const Eigen::VectorXd theta = convolve(m);
        DerivativeTensor t(k, m);
        for (const auto& tuple : detail::sorted_tuples(m.size(), k))
            detail::scatter_symmetric(t, tuple, derivative_from_theta(theta, k, tuple));
        if (normalize) normalize_tensor(t);
        return t;
    }

    /// Unnormalized first derivative kernel y -> dF/dm(m, y).
    [[nodiscard]] GridField first_derivative(const GridField& m) const {
        const Eigen::VectorXd theta = convolve(m);
        GridField out(m.domain);
        for (std::size_t y = 0; y < m.size(); ++y) {
            const std::size_t idx[1] = {y};
            out[y] = derivative_from_theta(theta, 1, idx);
        }
        return out;
    }

private:
    [[nodiscard]] double derivative_from_theta(const Eigen::VectorXd& theta, int k, std::span<const std::size_t> idx) const {
        const GridDomain& d = kernel_.domain;
        double s = 0.0;
        for (std::size_t z = 0; z < d.size(); ++z) {
            double prod = phi_.eval(d.x(z), theta[static_cast<Eigen::Index>(z)], k);
            for (std::size_t y : idx) prod *= rho(y, z);
            s += d.weight(z) * prod;
        }
        return s;
    }

    PhiSpec phi_;
    GridField kernel_;
};

inline AnalyticFunctional analytic_functional(PhiSpec phi, GridField kernel) {
    return {std::move(phi), std::move(kernel)};
}

} // namespace mil
