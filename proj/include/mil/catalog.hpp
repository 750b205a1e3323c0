#pragma once

#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/wcalculus.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace mil {

/// Catalogue entry: value and first two derivatives of a unit-amplitude shape.
struct CatalogEntry {
    std::string id;
    std::string description;
    bool uses_width = false;
    std::function<double(double, double)> value;
    std::function<double(double, double)> d1;
    std::function<double(double, double)> d2;
};

namespace detail {

inline double gauss_moment(double x, double width, int deriv) {
    double s = 0.0;
    for (int k = -4; k <= 4; ++k) {
        const double y = x - k;
        const double w2 = width * width;
        const double g = std::exp(-0.5 * y * y / w2) / (width * std::sqrt(two_pi));
        if (deriv == 0) s += g;
        else if (deriv == 1) s += -y / w2 * g;
        else s += (y * y / (w2 * w2) - 1.0 / w2) * g;
    }
    return s;
}

/// 30 r^2 (1 - r)^2 with r = x mod 1: unit integral, C^2 with a jump in the
/// third derivative, so Fourier modes decay like k^-4.
inline double bump4(double x, int deriv) {
    const double r = x - std::floor(x);
    if (deriv == 0) return 30.0 * r * r * (1 - r) * (1 - r);
    if (deriv == 1) return 60.0 * r * (1 - r) * (1 - 2 * r);
    return 60.0 * (1 - 6 * r + 6 * r * r);
}

} // namespace detail

inline const std::vector<CatalogEntry>& formula_catalog() {
    static const std::vector<CatalogEntry> c = [] {
        const double w = two_pi, p = std::numbers::pi;
        std::vector<CatalogEntry> v;
        v.push_back({"zero", "0", false, [](double, double) { return 0.0; }, [](double, double) { return 0.0; },
                     [](double, double) { return 0.0; }});
        v.push_back({"const", "1", false, [](double, double) { return 1.0; }, [](double, double) { return 0.0; },
                     [](double, double) { return 0.0; }});
        v.push_back({"cos1", "cos 2 pi x", false, [w](double x, double) { return std::cos(w * x); },
                     [w](double x, double) { return -w * std::sin(w * x); },
                     [w](double x, double) { return -w * w * std::cos(w * x); }});
        v.push_back({"sin1", "sin 2 pi x", false, [w](double x, double) { return std::sin(w * x); },
                     [w](double x, double) { return w * std::cos(w * x); },
                     [w](double x, double) { return -w * w * std::sin(w * x); }});
        v.push_back({"cos2", "cos 4 pi x", false, [w](double x, double) { return std::cos(2 * w * x); },
                     [w](double x, double) { return -2 * w * std::sin(2 * w * x); },
                     [w](double x, double) { return -4 * w * w * std::cos(2 * w * x); }});
        v.push_back({"sin2", "sin 4 pi x", false, [w](double x, double) { return std::sin(2 * w * x); },
                     [w](double x, double) { return 2 * w * std::cos(2 * w * x); },
                     [w](double x, double) { return -4 * w * w * std::sin(2 * w * x); }});
        v.push_back({"cospi", "cos pi x (interval)", false, [p](double x, double) { return std::cos(p * x); },
                     [p](double x, double) { return -p * std::sin(p * x); },
                     [p](double x, double) { return -p * p * std::cos(p * x); }});
        v.push_back({"gauss", "wrapped Gaussian at 0 with unit integral, width w", true,
                     [](double x, double s) { return detail::gauss_moment(x, s, 0); },
                     [](double x, double s) { return detail::gauss_moment(x, s, 1); },
                     [](double x, double s) { return detail::gauss_moment(x, s, 2); }});
        v.push_back({"bump4", "30 x^2 (1-x)^2 on [0,1), periodic", false,
                     [](double x, double) { return detail::bump4(x, 0); },
                     [](double x, double) { return detail::bump4(x, 1); },
                     [](double x, double) { return detail::bump4(x, 2); }});
        return v;
    }();
    return c;
}

inline const CatalogEntry* find_formula(const std::string& id) {
    for (const auto& e : formula_catalog())
        if (e.id == id) return &e;
    return nullptr;
}

/// offset + amp * shape(x).
struct Formula {
    std::string id = "zero";
    double amp = 1.0;
    double offset = 0.0;
    double width = 0.1;

    [[nodiscard]] const CatalogEntry& entry() const {
        const CatalogEntry* e = find_formula(id);
        require(e != nullptr, ErrorKind::config_invalid, "unknown formula id '" + id + "'");
        return *e;
    }
    [[nodiscard]] double operator()(double x) const { return offset + amp * entry().value(x, width); }
    [[nodiscard]] double d1(double x) const { return amp * entry().d1(x, width); }
    [[nodiscard]] double d2(double x) const { return amp * entry().d2(x, width); }
    [[nodiscard]] std::function<double(double)> fn() const {
        return [f = *this](double x) { return f(x); };
    }
    [[nodiscard]] std::function<double(double)> d1_fn() const {
        return [f = *this](double x) { return f.d1(x); };
    }
    [[nodiscard]] std::function<double(double)> d2_fn() const {
        return [f = *this](double x) { return f.d2(x); };
    }
    [[nodiscard]] GridField sample(const GridDomain& d) const { return GridField::from_function(d, fn()); }
};

inline std::map<std::string, PhiSpec> phi_catalog() {
    return {{"linear", phi_linear()}, {"square", phi_square()}, {"half_square", phi_half_square()}, {"exp", phi_exp()}};
}

} // namespace mil
