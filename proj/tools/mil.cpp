// mil: run recovery scenarios, convergence studies and list catalogue formulas.

#include "mil/experiment.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

constexpr int exit_pass = 0;
constexpr int exit_fail = 2;
constexpr int exit_config = 3;
constexpr int exit_solver = 4;

std::vector<std::size_t> parse_levels(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(item, &used);
            mil::require(used == item.size() && v > 0, mil::ErrorKind::config_invalid, "bad level '" + item + "'");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            mil::fail(mil::ErrorKind::config_invalid, "bad level '" + item + "'");
        }
    }
    return out;
}

void print_verdicts(const mil::json& verdicts) {
    for (const auto& v : verdicts) {
        std::cout << (v["pass"].get<bool>() ? "PASS " : "FAIL ") << v["name"].get<std::string>();
        if (v.contains("value"))
            std::cout << "  " << std::setprecision(3) << std::scientific << v["value"].get<double>() << ' '
                      << v["relation"].get<std::string>() << ' ' << v["tolerance"].get<double>();
        std::cout << '\n';
    }
}

int run_verb(const std::string& path) {
    const mil::ExperimentConfig cfg = mil::load_config(path);
    const mil::RunReport rep = mil::run(cfg);
    std::cout << "scenario " << cfg.scenario << "\n";
    print_verdicts(rep.body["verdicts"]);
    std::cout << "report " << rep.path.string() << "  (" << std::fixed << std::setprecision(2) << rep.wall_time
              << " s)\n";
    return rep.pass ? exit_pass : exit_fail;
}

int converge_verb(const std::string& path, const std::string& levels) {
    const mil::ExperimentConfig cfg = mil::load_config(path);
    const mil::ConvergenceReport rep = mil::convergence_study(cfg, parse_levels(levels), mil::output_dir(cfg));
    std::cout << "scenario " << cfg.scenario << "\n" << std::setw(6) << "N" << std::setw(8) << "M" << std::setw(14)
              << "error" << std::setw(10) << "order\n";
    for (const auto& r : rep.rows) {
        std::cout << std::setw(6) << r.N << std::setw(8) << r.M << std::setw(14) << std::scientific
                  << std::setprecision(4) << r.error;
        if (std::isfinite(r.order)) std::cout << std::setw(10) << std::fixed << std::setprecision(3) << r.order;
        std::cout << '\n';
    }
    print_verdicts(rep.body["verdicts"]);
    std::cout << "report " << rep.path.string() << '\n';
    return rep.pass ? exit_pass : exit_fail;
}

int catalog_verb() {
    std::cout << "formulas (value = offset + amp * shape):\n";
    for (const auto& e : mil::formula_catalog())
        std::cout << "  " << std::left << std::setw(8) << e.id << e.description << (e.uses_width ? "  [width]" : "")
                  << '\n';
    std::cout << "phi:\n";
    for (const auto& [name, phi] : mil::phi_catalog()) std::cout << "  " << name << '\n';
    std::cout << "scenarios:\n";
    for (const auto& s : mil::scenario_names()) std::cout << "  " << s << '\n';
    return exit_pass;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mil: measure-inverse recovery experiments"};
    app.require_subcommand(1);

    std::string run_config;
    auto* run = app.add_subcommand("run", "run one scenario from a JSON config");
    run->add_option("config", run_config, "config file")->required();

    std::string conv_config, levels = "32,64,128";
    auto* conv = app.add_subcommand("converge", "rerun a scenario over grid levels");
    conv->add_option("config", conv_config, "config file")->required();
    conv->add_option("--levels", levels, "comma-separated grid sizes")->capture_default_str();

    auto* cat = app.add_subcommand("catalog", "list formula ids");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_pass : exit_config;
    }

    try {
        if (*run) return run_verb(run_config);
        if (*conv) return converge_verb(conv_config, levels);
        if (*cat) return catalog_verb();
    } catch (const mil::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == mil::ErrorKind::config_invalid ? exit_config : exit_solver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_solver;
    }
    return exit_pass;
}
