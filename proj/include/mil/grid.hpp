#pragma once

#include "mil/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mil {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

enum class DomainKind { periodic_torus, neumann_interval };

/// Uniform 1-D grid on the unit torus (x_i = i/N) or on [0,1] with both
/// endpoints as nodes (x_i = i/(N-1)).
///
/// The interval carries trapezoid quadrature weights (h/2 at the endpoints),
/// which are the control-volume sizes of the zero-flux finite-volume scheme.
/// Edges connect neighbouring nodes; the torus has N edges, the interval N-1.
class GridDomain {
public:
    static GridDomain torus(std::size_t n) { return GridDomain(DomainKind::periodic_torus, n); }
    static GridDomain interval(std::size_t n) { return GridDomain(DomainKind::neumann_interval, n); }

    [[nodiscard]] DomainKind kind() const { return data_->kind; }
    [[nodiscard]] bool periodic() const { return data_->kind == DomainKind::periodic_torus; }
    [[nodiscard]] std::size_t size() const { return data_->n; }
    [[nodiscard]] double spacing() const { return data_->h; }
    [[nodiscard]] double x(std::size_t i) const { return data_->coords[i]; }
    [[nodiscard]] std::span<const double> coordinates() const { return data_->coords; }
    [[nodiscard]] const Eigen::VectorXd& weights() const { return data_->weights; }
    [[nodiscard]] double weight(std::size_t i) const { return data_->weights[static_cast<Eigen::Index>(i)]; }

    [[nodiscard]] std::size_t edge_count() const { return periodic() ? size() : size() - 1; }
    /// Nodes joined by edge e (left, right); on the torus the last edge wraps.
    [[nodiscard]] std::pair<std::size_t, std::size_t> edge(std::size_t e) const {
        return {e, (e + 1) % size()};
    }
    [[nodiscard]] double edge_midpoint(std::size_t e) const { return x(e) + 0.5 * spacing(); }

    [[nodiscard]] double integrate(const Eigen::VectorXd& v) const { return data_->weights.dot(v); }
    [[nodiscard]] double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        return data_->weights.dot(a.cwiseProduct(b));
    }

    [[nodiscard]] std::string name() const {
        return (periodic() ? "torus" : "interval") + std::to_string(size());
    }

    friend bool operator==(const GridDomain& a, const GridDomain& b) {
        return a.kind() == b.kind() && a.size() == b.size();
    }

private:
    struct Data {
        DomainKind kind;
        std::size_t n;
        double h;
        std::vector<double> coords;
        Eigen::VectorXd weights;
    };

    GridDomain(DomainKind kind, std::size_t n) {
        require(n >= 8, ErrorKind::invalid_argument, "grid needs at least 8 points");
        auto d = std::make_shared<Data>();
        d->kind = kind;
        d->n = n;
        d->h = kind == DomainKind::periodic_torus ? 1.0 / static_cast<double>(n)
                                                 : 1.0 / static_cast<double>(n - 1);
        d->coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) d->coords[i] = static_cast<double>(i) * d->h;
        d->weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), d->h);
        if (kind == DomainKind::neumann_interval) {
            d->weights[0] = 0.5 * d->h;
            d->weights[static_cast<Eigen::Index>(n - 1)] = 0.5 * d->h;
        }
        data_ = std::move(d);
    }

    std::shared_ptr<const Data> data_;
};

inline void require_same_domain(const GridDomain& a, const GridDomain& b) {
    require(a == b, ErrorKind::domain_mismatch, a.name() + " vs " + b.name());
}

/// Signed grid function (directions, test functions, kernels).
struct GridField {
    GridDomain domain;
    Eigen::VectorXd values;

    explicit GridField(GridDomain d)
        : domain(std::move(d)), values(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain.size()))) {}
    GridField(GridDomain d, Eigen::VectorXd v) : domain(std::move(d)), values(std::move(v)) {
        require(values.size() == static_cast<Eigen::Index>(domain.size()), ErrorKind::invalid_argument,
                "field size does not match domain");
        require(values.allFinite(), ErrorKind::non_finite, "field has non-finite entries");
    }

    static GridField from_function(const GridDomain& d, const std::function<double(double)>& fn) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(d.size()));
        for (std::size_t i = 0; i < d.size(); ++i) v[static_cast<Eigen::Index>(i)] = fn(d.x(i));
        return {d, std::move(v)};
    }

    /// Single-cell spike of unit mass at node i (value 1/w_i).
    static GridField spike(const GridDomain& d, std::size_t i) {
        GridField f(d);
        f.values[static_cast<Eigen::Index>(i)] = 1.0 / d.weight(i);
        return f;
    }

    [[nodiscard]] std::size_t size() const { return domain.size(); }
    double& operator[](std::size_t i) { return values[static_cast<Eigen::Index>(i)]; }
    double operator[](std::size_t i) const { return values[static_cast<Eigen::Index>(i)]; }
    [[nodiscard]] double mass() const { return domain.integrate(values); }

    GridField& operator+=(const GridField& o) {
        require_same_domain(domain, o.domain);
        values += o.values;
        return *this;
    }
    GridField& operator-=(const GridField& o) {
        require_same_domain(domain, o.domain);
        values -= o.values;
        return *this;
    }
    GridField& operator*=(double s) {
        values *= s;
        return *this;
    }
    friend GridField operator+(GridField a, const GridField& b) { return a += b; }
    friend GridField operator-(GridField a, const GridField& b) { return a -= b; }
    friend GridField operator*(GridField a, double s) { return a *= s; }
    friend GridField operator*(double s, GridField a) { return a *= s; }
};

inline double inner(const GridField& a, const GridField& b) {
    require_same_domain(a.domain, b.domain);
    return a.domain.inner(a.values, b.values);
}

inline double l2_norm(const GridField& a) { return std::sqrt(inner(a, a)); }

/// Quadrature L2 distance divided by the L2 norm of the reference.
inline double relative_l2(const Eigen::VectorXd& value, const Eigen::VectorXd& truth,
                          const Eigen::VectorXd& weights) {
    const Eigen::VectorXd d = value - truth;
    const double den = std::sqrt(weights.dot(truth.cwiseProduct(truth)));
    const double num = std::sqrt(weights.dot(d.cwiseProduct(d)));
    return den > 0 ? num / den : num;
}

/// Probability density on a grid: nonnegative with unit quadrature mass.
class GridMeasure {
public:
    [[nodiscard]] const GridDomain& domain() const { return field_.domain; }
    [[nodiscard]] const Eigen::VectorXd& density() const { return field_.values; }
    [[nodiscard]] const GridField& field() const { return field_; }
    [[nodiscard]] std::size_t size() const { return field_.size(); }
    double operator[](std::size_t i) const { return field_[i]; }

    friend GridMeasure make_measure(const GridDomain& domain, std::span<const double> raw);
    friend GridMeasure make_measure(const GridField& field);

private:
    explicit GridMeasure(GridField f) : field_(std::move(f)) {}
    GridField field_;
};

inline GridMeasure make_measure(const GridField& field) {
    for (std::size_t i = 0; i < field.size(); ++i)
        require(field[i] >= -1e-14, ErrorKind::negative_density,
                "density " + std::to_string(field[i]) + " at node " + std::to_string(i));
    const double mass = field.mass();
    require(std::abs(mass - 1.0) <= 1e-10, ErrorKind::not_normalized,
            "mass is " + std::to_string(mass));
    GridField clean = field;
    clean.values = clean.values.cwiseMax(0.0);
    return GridMeasure(std::move(clean));
}

inline GridMeasure make_measure(const GridDomain& domain, std::span<const double> raw) {
    require(raw.size() == domain.size(), ErrorKind::invalid_argument, "raw density has wrong length");
    Eigen::VectorXd v(static_cast<Eigen::Index>(raw.size()));
    for (std::size_t i = 0; i < raw.size(); ++i) v[static_cast<Eigen::Index>(i)] = raw[i];
    return make_measure(GridField(domain, std::move(v)));
}

/// Rescales a nonnegative field to unit mass. Callers that must not rescale
/// use make_measure directly.
inline GridMeasure normalized_measure(GridField field) {
    field *= 1.0 / field.mass();
    return make_measure(field);
}

inline GridMeasure uniform_measure(const GridDomain& d) {
    return make_measure(GridField(d, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d.size()))));
}

} // namespace mil
