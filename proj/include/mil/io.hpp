#pragma once

#include "mil/boundary.hpp"
#include "mil/error.hpp"
#include "mil/grid.hpp"
#include "mil/mfg.hpp"
#include "mil/pdesolve.hpp"
#include "mil/wcalculus.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mil::io {

using json = nlohmann::json;

/// %.17g rendering, enough to round-trip a double.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// FNV-1a over the raw bytes of the base density, as 16 hex digits.
inline std::string base_id(const GridField& f) {
    std::uint64_t h = 1469598103934665603ULL;
    for (Eigen::Index i = 0; i < f.values.size(); ++i) {
        unsigned char bytes[sizeof(double)];
        const double v = f.values[i];
        std::memcpy(bytes, &v, sizeof v);
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p);
    require(static_cast<bool>(os), ErrorKind::invalid_argument, "cannot write " + p.string());
    return os;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
    auto os = open_out(p);
    os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// CSV

inline std::string field_csv(const GridField& f) {
    std::ostringstream os;
    os << "x,value\n";
    for (std::size_t i = 0; i < f.size(); ++i) os << fmt(f.domain.x(i)) << ',' << fmt(f[i]) << '\n';
    return os.str();
}

inline void write_field_csv(const std::filesystem::path& p, const GridField& f) { open_out(p) << field_csv(f); }
inline void write_field_csv(const std::filesystem::path& p, const GridMeasure& m) { write_field_csv(p, m.field()); }

/// Reads an `x,value` file back onto a domain.
inline GridField read_field_csv(const std::filesystem::path& p, const GridDomain& d) {
    std::ifstream is(p);
    require(static_cast<bool>(is), ErrorKind::invalid_argument, "cannot read " + p.string());
    std::string line;
    std::getline(is, line);
    require(line == "x,value", ErrorKind::invalid_argument, "unexpected header in " + p.string());
    std::vector<double> vals;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        require(comma != std::string::npos, ErrorKind::invalid_argument, "malformed row in " + p.string());
        vals.push_back(std::stod(line.substr(comma + 1)));
    }
    require(vals.size() == d.size(), ErrorKind::invalid_argument, "row count does not match domain");
    return {d, Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()))};
}

/// Overlay of truth and recovered values, one row per node.
inline void write_overlay_csv(const std::filesystem::path& p, const GridField& truth, const GridField& recovered,
                              const std::vector<bool>& valid = {}) {
    auto os = open_out(p);
    os << "x,truth,recovered" << (valid.empty() ? "" : ",valid") << '\n';
    for (std::size_t i = 0; i < truth.size(); ++i) {
        os << fmt(truth.domain.x(i)) << ',' << fmt(truth[i]) << ',' << fmt(recovered[i]);
        if (!valid.empty()) os << ',' << (valid[i] ? 1 : 0);
        os << '\n';
    }
}

inline void write_evolution_csv(const std::filesystem::path& p, const EvolutionField& e) {
    auto os = open_out(p);
    os << "t,x,value\n";
    for (std::size_t n = 0; n <= e.time.steps; ++n)
        for (std::size_t i = 0; i < e.domain.size(); ++i)
            os << fmt(e.time.time(n)) << ',' << fmt(e.domain.x(i)) << ','
               << fmt(e.snapshots(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(i))) << '\n';
}

inline void write_mfg_csv(const std::filesystem::path& p, const MfgSolution& s) {
    auto os = open_out(p);
    os << "t,x,u,m\n";
    for (std::size_t n = 0; n <= s.time.steps; ++n)
        for (std::size_t i = 0; i < s.domain.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(n), c = static_cast<Eigen::Index>(i);
            os << fmt(s.time.time(n)) << ',' << fmt(s.domain.x(i)) << ',' << fmt(s.u(r, c)) << ',' << fmt(s.m(r, c)) << '\n';
        }
}

inline void write_trace_csv(const std::filesystem::path& p, const BoundaryTrace& t) {
    auto os = open_out(p);
    os << "t,left,right\n";
    for (std::size_t n = 0; n < t.times.size(); ++n)
        os << fmt(t.times[n]) << ',' << fmt(t.left[n]) << ',' << fmt(t.right[n]) << '\n';
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const DerivativeTensor& t) {
    return {{"order", t.order},
            {"shape", std::vector<std::size_t>(static_cast<std::size_t>(t.order), t.n)},
            {"base_id", base_id(t.base)},
            {"normalized", t.normalized},
            {"values", t.values}};
}

inline json to_json(const EigenSystem& es) {
    json e = json::array(), ed = json::array();
    for (std::size_t k = 0; k < es.size(); ++k) {
        e.push_back(std::vector<double>(es.E[k].values.data(), es.E[k].values.data() + es.E[k].values.size()));
        ed.push_back(std::vector<double>(es.E_dual[k].values.data(), es.E_dual[k].values.data() + es.E_dual[k].values.size()));
    }
    return {{"lambda", es.lambda}, {"E", e}, {"E_dual", ed}};
}

inline std::vector<double> to_vector(const GridField& f) {
    return {f.values.data(), f.values.data() + f.values.size()};
}

} // namespace mil::io
