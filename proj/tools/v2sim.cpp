#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "v2sim/harness/run.hpp"

namespace h = v2sim::harness;

int main(int argc, char** argv) {
    CLI::App app{"V2 defect / Schottky diode scenario runner"};
    app.require_subcommand(1);
    app.set_version_flag("--version", h::kToolVersion);

    std::string config;
    std::string out_dir;
    std::uint64_t seed = 0;
    int jobs = 1;

    auto* run = app.add_subcommand("run", "Execute a scenario and write its CSV outputs");
    run->add_option("config", config, "Scenario TOML file")->required();
    auto* out_opt = run->add_option("--out", out_dir, "Output directory");
    auto* seed_opt = run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--jobs", jobs, "Concurrent sweep points")->check(CLI::PositiveNumber);

    auto* val = app.add_subcommand("validate", "Parse and check a scenario without running it");
    val->add_option("config", config, "Scenario TOML file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (*val) {
        try {
            h::validate(h::load_scenario(config));
        } catch (...) {
            const auto e = h::classify(std::current_exception());
            std::cerr << "error [" << e.category << "]: " << e.message << '\n';
            return e.code;
        }
        std::cout << "ok\n";
        return 0;
    }

    h::RunOptions opt;
    if (*out_opt) opt.out = std::filesystem::path(out_dir);
    if (*seed_opt) opt.seed = seed;
    opt.jobs = jobs;
    const auto r = h::run_scenario(config, opt);
    if (r.error.code != h::kExitOk) {
        std::cerr << "error [" << r.error.category << "]: " << r.error.message << '\n';
        return r.error.code;
    }
    std::cout << r.output_dir.string() << '\n';
    return 0;
}
