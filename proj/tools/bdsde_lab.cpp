#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bdsde/experiment.hpp"

using namespace bdsde;

namespace {

json build_config(const std::string& path, const std::vector<std::string>& sets) {
    json doc = load_config(path);
    for (const auto& s : sets) apply_override(doc, s);
    return doc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bdsde_lab: backward doubly stochastic solvers and SPDE field experiments"};
    app.require_subcommand(1);

    std::string config;
    std::vector<std::string> sets;
    std::string out_dir;
    std::size_t threads = 1;

    auto* run = app.add_subcommand("run", "run a scenario and write its artifacts");
    run->add_option("--config", config, "scenario JSON")->required();
    run->add_option("--set", sets, "override, e.g. --set mc.seed=7");
    run->add_option("--out", out_dir, "output directory (default: the config's output, else ./out)");
    run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "check a config without running it");
    validate->add_option("--config", config, "scenario JSON")->required();
    validate->add_option("--set", sets, "override");

    auto* presets = app.add_subcommand("presets", "list coefficient, generator and noise presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (presets->parsed()) {
            json out = json::array();
            for (const auto& p : list_presets()) {
                out.push_back({{"category", p.category},
                               {"name", p.name},
                               {"params", p.params},
                               {"constants", p.constants},
                               {"description", p.description}});
            }
            std::cout << json{{"presets", out}, {"scenarios", scenario_names()}}.dump(2) << '\n';
            return 0;
        }
        const json doc = build_config(config, sets);
        if (validate->parsed()) {
            const auto report = validate_config(doc);
            std::cout << report.to_json().dump(2) << '\n';
            return report.ok() ? 0 : 2;
        }
        if (out_dir.empty()) out_dir = doc.value("output", std::string("out"));
        const auto summary = run_scenario(doc, out_dir, threads);
        std::cout << summary.to_json().dump(2) << '\n';
        return exit_code(summary);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure in " << e.stage() << ": " << e.what() << '\n';
        return 3;
    }
}
