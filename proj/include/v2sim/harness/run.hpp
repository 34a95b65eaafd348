#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "v2sim/core/errors.hpp"
#include "v2sim/harness/config.hpp"
#include "v2sim/harness/pipelines.hpp"

namespace v2sim::harness {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "V2SIM_OUTPUT_DIR";

enum ExitCode : int { kExitOk = 0, kExitUnknownCommand = 2, kExitValidation = 3, kExitNumerical = 4 };

struct ErrorInfo {
    int code = kExitOk;
    std::string category;
    std::string message;
};

/// Maps an in-flight exception to its exit code and category name.
inline ErrorInfo classify(std::exception_ptr e) {
    try {
        std::rethrow_exception(e);
    } catch (const UnknownCommandError& x) {
        return {kExitUnknownCommand, "unknown-command", x.what()};
    } catch (const ValidationError& x) {
        return {kExitValidation, "validation", x.what()};
    } catch (const DomainError& x) {
        return {kExitValidation, "validation", x.what()};
    } catch (const NumericalError& x) {
        return {kExitNumerical, "numerical", x.what()};
    } catch (const std::exception& x) {
        return {kExitNumerical, "runtime", x.what()};
    }
}

/// --out, then the scenario's output_dir, then $V2SIM_OUTPUT_DIR/<name>, then ./v2sim-out/<name>.
inline fs::path output_directory(const LoadedScenario& ls, const std::optional<fs::path>& cli_out) {
    if (cli_out) return *cli_out;
    if (!ls.scenario.output_dir.empty()) return ls.resolve(ls.scenario.output_dir);
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) return fs::path(env) / ls.scenario.name;
    return fs::path("v2sim-out") / ls.scenario.name;
}

struct RunManifest {
    std::string scenario_hash;
    std::string tool_version = kToolVersion;
    double wall_clock_s = 0.0;
    std::vector<EmittedFile> files;
};

inline void write_manifest(const fs::path& dir, const Scenario& s, const RunManifest& m, const std::string& status) {
    nlohmann::ordered_json j;
    j["scenario"] = s.name;
    j["command"] = s.command;
    j["scenario_hash"] = m.scenario_hash;
    j["tool_version"] = m.tool_version;
    j["seed"] = s.seed ? nlohmann::ordered_json(*s.seed) : nlohmann::ordered_json(nullptr);
    j["status"] = status;
    j["wall_clock_s"] = m.wall_clock_s;
    j["files"] = nlohmann::ordered_json::array();
    for (const auto& f : m.files) j["files"].push_back({{"name", f.name}, {"rows", f.rows}});
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << j.dump(2) << '\n';
}

struct SweepPoint {
    double value = 0.0;
    ErrorInfo error;
    PipelineResult result;
};

/// One run per sweep value, each in its own point_NNN directory, up to `jobs` at a time.
/// Results merge in input order into sweep_summary.csv.
inline std::vector<SweepPoint> run_sweep(const LoadedScenario& ls, const fs::path& dir, int jobs, RunManifest& manifest) {
    const SweepBlock& sw = *ls.scenario.sweep;
    if (sw.values.empty()) throw ValidationError("sweep.values", "must not be empty");
    std::vector<SweepPoint> points(sw.values.size());
    std::vector<LoadedScenario> configs;
    for (std::size_t k = 0; k < sw.values.size(); ++k) {
        LoadedScenario p = ls;
        p.scenario.sweep.reset();
        set_parameter(p.scenario, sw.parameter, sw.values[k]);
        validate(p);
        configs.push_back(std::move(p));
        points[k].value = sw.values[k];
    }
    auto point_dir = [&](std::size_t k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "point_%03zu", k);
        return std::string(buf);
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < points.size(); k = next++) {
            try {
                points[k].result = run_pipeline(configs[k], dir / point_dir(k));
            } catch (...) {
                points[k].error = classify(std::current_exception());
            }
        }
    };
    const int n = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<std::string> keys;
    for (const auto& p : points)
        for (const auto& [k, v] : p.result.summary)
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    std::vector<std::string> header{"index", sw.parameter, "status"};
    header.insert(header.end(), keys.begin(), keys.end());
    io::CsvTable merged(header);
    for (std::size_t k = 0; k < points.size(); ++k) {
        std::vector<io::Cell> row{static_cast<long long>(k), points[k].value,
                                  points[k].error.code == kExitOk ? std::string("ok") : points[k].error.category};
        for (const auto& key : keys) {
            double v = std::numeric_limits<double>::quiet_NaN();
            for (const auto& [kk, vv] : points[k].result.summary)
                if (kk == key) v = vv;
            row.push_back(v);
        }
        merged.add_row(row);
        for (const auto& f : points[k].result.files) manifest.files.push_back({point_dir(k) + "/" + f.name, f.rows});
    }
    merged.write(dir / "sweep_summary.csv");
    manifest.files.push_back({"sweep_summary.csv", merged.row_count()});
    return points;
}

struct RunOptions {
    std::optional<fs::path> out;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
};

struct RunOutcome {
    ErrorInfo error;
    fs::path output_dir;
    RunManifest manifest;
};

/// Load, validate and execute; never throws. Errors come back as exit code + category.
inline RunOutcome run_scenario(const fs::path& config, const RunOptions& opt = {}) {
    RunOutcome out;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<LoadedScenario> ls;
    try {
        ls = load_scenario(config);
        if (opt.seed) ls->scenario.seed = opt.seed;
        validate(*ls);
        out.output_dir = output_directory(*ls, opt.out);
        fs::create_directories(out.output_dir);
        out.manifest.scenario_hash = scenario_hash(ls->scenario);
        if (ls->scenario.sweep) {
            const auto pts = run_sweep(*ls, out.output_dir, opt.jobs, out.manifest);
            for (const auto& p : pts)
                if (p.error.code != kExitOk) {
                    out.error = p.error;
                    break;
                }
        } else {
            out.manifest.files = run_pipeline(*ls, out.output_dir).files;
        }
    } catch (...) {
        out.error = classify(std::current_exception());
    }
    out.manifest.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ls && !out.output_dir.empty() && fs::exists(out.output_dir)) {
        try {
            write_manifest(out.output_dir, ls->scenario, out.manifest,
                           out.error.code == kExitOk ? "ok" : out.error.category);
        } catch (...) {
        }
    }
    return out;
}

} // namespace v2sim::harness
