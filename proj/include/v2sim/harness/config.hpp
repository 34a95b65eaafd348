#pragma once

#include <charconv>
#include <climits>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <toml.hpp>

#include "v2sim/core/errors.hpp"
#include "v2sim/harness/scenario.hpp"
#include "v2sim/io/csv.hpp"

namespace v2sim::harness {

namespace detail {

inline std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

inline double as_number(const toml::node& n, const std::string& path) {
    if (auto f = n.as_floating_point()) return f->get();
    if (auto i = n.as_integer()) return static_cast<double>(i->get());
    throw ValidationError(path, "expected a number");
}

class TomlReader {
public:
    TomlReader(const toml::table& t, std::string prefix) : t_(t), prefix_(std::move(prefix)) {}

    void operator()(const char* key, double& v) {
        if (auto n = take(key)) v = as_number(*n, path(key));
    }
    void operator()(const char* key, int& v) {
        if (auto n = take(key)) {
            auto i = n->as_integer();
            if (!i) throw ValidationError(path(key), "expected an integer");
            if (i->get() < INT32_MIN || i->get() > INT32_MAX) throw ValidationError(path(key), "integer out of range");
            v = static_cast<int>(i->get());
        }
    }
    void operator()(const char* key, bool& v) {
        if (auto n = take(key)) {
            auto b = n->as_boolean();
            if (!b) throw ValidationError(path(key), "expected true or false");
            v = b->get();
        }
    }
    void operator()(const char* key, std::string& v) {
        if (auto n = take(key)) {
            auto s = n->as_string();
            if (!s) throw ValidationError(path(key), "expected a string");
            v = s->get();
        }
    }
    void operator()(const char* key, std::optional<std::uint64_t>& v) {
        if (auto n = take(key)) {
            // Seeds above INT64_MAX do not fit a TOML integer and travel as decimal strings.
            if (auto str = n->as_string()) {
                const std::string& t = str->get();
                std::uint64_t u = 0;
                const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), u);
                if (t.empty() || ec != std::errc{} || end != t.data() + t.size())
                    throw ValidationError(path(key), "expected a non-negative integer");
                v = u;
                return;
            }
            auto i = n->as_integer();
            if (!i || i->get() < 0) throw ValidationError(path(key), "expected a non-negative integer");
            v = static_cast<std::uint64_t>(i->get());
        }
    }
    void operator()(const char* key, std::vector<double>& v) {
        if (auto n = take(key)) v = numbers(*n, path(key));
    }
    void operator()(const char* key, std::vector<std::string>& v) {
        if (auto n = take(key)) {
            auto a = n->as_array();
            if (!a) throw ValidationError(path(key), "expected an array of strings");
            v.clear();
            for (std::size_t k = 0; k < a->size(); ++k) {
                auto s = (*a)[k].as_string();
                if (!s) throw ValidationError(path(key) + "[" + std::to_string(k) + "]", "expected a string");
                v.push_back(s->get());
            }
        }
    }
    void operator()(const char* key, std::vector<std::vector<double>>& v) {
        if (auto n = take(key)) {
            auto a = n->as_array();
            if (!a) throw ValidationError(path(key), "expected an array of arrays");
            v.clear();
            for (std::size_t k = 0; k < a->size(); ++k)
                v.push_back(numbers((*a)[k], path(key) + "[" + std::to_string(k) + "]"));
        }
    }

    template <class T>
    void table(const char* key, T& v) {
        if (auto n = take(key)) {
            auto sub = n->as_table();
            if (!sub) throw ValidationError(path(key), "expected a table");
            TomlReader r(*sub, path(key));
            describe(r, v);
            r.finish();
        }
    }
    template <class T>
    void table(const char* key, std::optional<T>& v) {
        if (t_.contains(key)) {
            v.emplace();
            table(key, *v);
        }
    }

    void finish() const {
        for (const auto& [k, n] : t_)
            if (!seen_.count(std::string(k.str()))) throw ValidationError(path(std::string(k.str())), "unknown key");
    }

private:
    std::string path(const std::string& key) const { return join(prefix_, key); }

    const toml::node* take(const char* key) {
        seen_.insert(key);
        return t_.get(key);
    }

    static std::vector<double> numbers(const toml::node& n, const std::string& p) {
        auto a = n.as_array();
        if (!a) throw ValidationError(p, "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t k = 0; k < a->size(); ++k) out.push_back(as_number((*a)[k], p + "[" + std::to_string(k) + "]"));
        return out;
    }

    const toml::table& t_;
    std::string prefix_;
    std::set<std::string> seen_;
};

inline std::string toml_double(double v) {
    std::string s = io::format_double(v);
    if (s.find_first_of(".eni") == std::string::npos) s += ".0";
    return s;
}

inline std::string toml_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default:
            if (static_cast<unsigned char>(c) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof buf, "\\u%04x", c);
                out += buf;
            } else {
                out += c;
            }
        }
    }
    return out + "\"";
}

inline std::string toml_array(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + toml_double(v[i]);
    return out + "]";
}

// Scalars of a table are emitted before its child tables.
class TomlWriter {
public:
    explicit TomlWriter(std::string prefix) : prefix_(std::move(prefix)) {}

    void operator()(const char* key, double v) { line(key, toml_double(v)); }
    void operator()(const char* key, int v) { line(key, std::to_string(v)); }
    void operator()(const char* key, bool v) { line(key, v ? "true" : "false"); }
    void operator()(const char* key, const std::string& v) { line(key, toml_string(v)); }
    void operator()(const char* key, const std::optional<std::uint64_t>& v) {
        if (v) line(key, *v > static_cast<std::uint64_t>(INT64_MAX) ? toml_string(std::to_string(*v)) : std::to_string(*v));
    }
    void operator()(const char* key, const std::vector<double>& v) { line(key, toml_array(v)); }
    void operator()(const char* key, const std::vector<std::string>& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + toml_string(v[i]);
        line(key, out + "]");
    }
    void operator()(const char* key, const std::vector<std::vector<double>>& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + toml_array(v[i]);
        line(key, out + "]");
    }

    template <class T>
    void table(const char* key, T& v) {
        TomlWriter w(join(prefix_, key));
        describe(w, v);
        children_ += "\n[" + w.prefix_ + "]\n" + w.str();
    }
    template <class T>
    void table(const char* key, std::optional<T>& v) {
        if (v) table(key, *v);
    }

    std::string str() const { return scalars_ + children_; }

private:
    void line(const char* key, const std::string& value) { scalars_ += std::string(key) + " = " + value + "\n"; }

    std::string prefix_;
    std::string scalars_;
    std::string children_;
};

// Assigns one numeric field addressed by its dotted path.
class NumericSetter {
public:
    NumericSetter(std::string target, double value) : target_(std::move(target)), value_(value) {}

    void operator()(const char* key, double& v) {
        if (match(key)) v = value_;
    }
    void operator()(const char* key, int& v) {
        if (match(key)) {
            if (value_ != std::floor(value_) || std::abs(value_) > INT32_MAX)
                throw ValidationError(target_, "integer parameter swept with a non-integer value");
            v = static_cast<int>(value_);
        }
    }
    void operator()(const char* key, std::optional<std::uint64_t>& v) {
        if (match(key)) {
            if (value_ < 0 || value_ != std::floor(value_))
                throw ValidationError(target_, "seed must be a non-negative integer");
            v = static_cast<std::uint64_t>(value_);
        }
    }
    template <class T>
    void operator()(const char* key, T&) {
        if (match(key)) throw ValidationError(target_, "sweep parameter must be a numeric scalar");
    }

    template <class T>
    void table(const char* key, T& v) {
        const std::string saved = prefix_;
        prefix_ = join(prefix_, key);
        describe(*this, v);
        prefix_ = saved;
    }
    template <class T>
    void table(const char* key, std::optional<T>& v) {
        if (v) table(key, *v);
    }

    bool found() const { return found_; }

private:
    bool match(const char* key) {
        if (join(prefix_, key) != target_) return false;
        found_ = true;
        return true;
    }

    std::string target_;
    double value_;
    std::string prefix_;
    bool found_ = false;
};

} // namespace detail

/// Parses scenario TOML text. Unknown keys raise ValidationError with the dotted key path.
inline Scenario parse_scenario(std::string_view text, const std::string& source = "config") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream where;
        where << source << ":" << e.source().begin.line;
        throw ValidationError(where.str(), std::string(e.description()));
    }
    Scenario s;
    detail::TomlReader r(root, "");
    describe(r, s);
    r.finish();
    return s;
}

/// Canonical serialization: fixed key order, shortest round-trip numbers.
inline std::string serialize(const Scenario& s) {
    Scenario copy = s;
    detail::TomlWriter w("");
    describe(w, copy);
    return w.str();
}

inline std::string scenario_hash(const Scenario& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : serialize(s)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Sets a numeric field by dotted path; ValidationError if the path does not name one.
inline void set_parameter(Scenario& s, const std::string& path, double value) {
    detail::NumericSetter set(path, value);
    describe(set, s);
    if (!set.found()) throw ValidationError(path, "no such scenario parameter");
}

struct LoadedScenario {
    Scenario scenario;
    std::filesystem::path base_dir;   // relative input files resolve against this

    std::filesystem::path resolve(const std::string& file) const {
        const std::filesystem::path p(file);
        return p.is_absolute() ? p : base_dir / p;
    }
};

inline LoadedScenario load_scenario(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError(path.string(), "cannot read config file");
    std::stringstream buf;
    buf << f.rdbuf();
    LoadedScenario out;
    out.scenario = parse_scenario(buf.str(), path.string());
    out.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return out;
}

/// Checks everything that can be checked without running a pipeline.
inline void validate(const LoadedScenario& ls) {
    const Scenario& s = ls.scenario;
    bool known = false;
    for (auto c : kCommands) known = known || c == s.command;
    if (!known) throw UnknownCommandError("unknown command \"" + s.command + "\"");
    if (s.name.empty()) throw ValidationError("name", "must not be empty");
    for (char c : s.name)
        if (c == '/' || c == '\\') throw ValidationError("name", "must not contain path separators");
    if (is_stochastic(s) && !s.seed) throw ValidationError("seed", "required for stochastic command " + s.command);

    validate(s.material);
    if (s.mesh.nx < 8 || s.mesh.nz < 8) throw ValidationError("mesh.nx", "mesh needs at least 8 nodes per axis");
    if (!(s.mesh.lateral_extent_um > 0.0)) throw ValidationError("mesh.lateral_extent_um", "must be > 0");
    if (!(s.mesh.edge_grading >= 1.0)) throw ValidationError("mesh.edge_grading", "must be >= 1");
    if (!(s.solver.temperature_K > 0.0)) throw ValidationError("solver.temperature_K", "must be > 0");
    if (!(s.solver.tolerance > 0.0)) throw ValidationError("solver.tolerance", "must be > 0");
    if (s.solver.max_iterations < 1) throw ValidationError("solver.max_iterations", "must be >= 1");
    donor_model(s.solver);
    if (!(s.site.depth_um > 0.0 && s.site.depth_um < s.material.epi_thickness_um))
        throw ValidationError("site.depth_um", "must lie inside the epilayer");
    optics::validate(s.optics);
    try {
        optics::validate(s.scan.grid);
    } catch (const ValidationError& e) {
        throw ValidationError("scan", e.what());
    }
    if (!(s.scan.power_nW > 0.0)) throw ValidationError("scan.power_nW", "must be > 0");

    for (auto T : s.depletion_map.temperatures_K)
        if (!(T > 0.0)) throw ValidationError("depletion_map.temperatures_K", "temperatures must be > 0");
    for (auto T : s.iv.temperatures_K)
        if (!(T > 0.0)) throw ValidationError("iv.temperatures_K", "temperatures must be > 0");
    if (!(s.iv.ideality >= 1.0)) throw ValidationError("iv.ideality", "must be >= 1");
    if (s.iv.voltage_points < 2) throw ValidationError("iv.voltage_points", "must be >= 2");

    if (s.command == "trap-sim" || s.trap != TrapBlock{}) trap_model(s.trap);
    const auto& ts = s.trap_sim;
    if (ts.schedule_conditions.size() != ts.schedule_durations_ms.size() || ts.schedule_conditions.empty())
        throw ValidationError("trap_sim.schedule_durations_ms", "needs one duration per schedule condition");
    for (std::size_t k = 0; k < ts.schedule_conditions.size(); ++k) {
        parse_condition(ts.schedule_conditions[k], "trap_sim.schedule_conditions[" + std::to_string(k) + "]");
        if (!(ts.schedule_durations_ms[k] > 0.0))
            throw ValidationError("trap_sim.schedule_durations_ms[" + std::to_string(k) + "]", "must be > 0");
    }
    parse_condition(ts.scan_condition, "trap_sim.scan_condition");
    parse_condition(ts.transient_initial, "trap_sim.transient_initial");
    parse_condition(ts.transient_pump, "trap_sim.transient_pump");
    if (!(ts.duration_ms > 0.0)) throw ValidationError("trap_sim.duration_ms", "must be > 0");
    if (ts.initial_state >= s.trap.n_states) throw ValidationError("trap_sim.initial_state", "out of range");
    if (ts.probe_state < 0 || ts.probe_state >= s.trap.n_states)
        throw ValidationError("trap_sim.probe_state", "out of range");
    if (ts.scans < 0) throw ValidationError("trap_sim.scans", "must be >= 0");
    if (ts.ensemble < 1) throw ValidationError("trap_sim.ensemble", "must be >= 1");

    const auto& io = s.ionization;
    if (!io.modes_file.empty() && !std::filesystem::exists(ls.resolve(io.modes_file)))
        throw ValidationError("ionization.modes_file", "file not found: " + ls.resolve(io.modes_file).string());
    if (!io.sigma_el_file.empty() && !std::filesystem::exists(ls.resolve(io.sigma_el_file)))
        throw ValidationError("ionization.sigma_el_file", "file not found: " + ls.resolve(io.sigma_el_file).string());
    for (std::size_t k = 0; k < io.modes.size(); ++k)
        if (io.modes[k].size() != 2)
            throw ValidationError("ionization.modes[" + std::to_string(k) + "]", "expected [energy_meV, huang_rhys]");
    if (io.lambda_points < 2) throw ValidationError("ionization.lambda_points", "must be >= 2");
    if (!(io.lambda_stop_nm > io.lambda_start_nm && io.lambda_start_nm > 0.0))
        throw ValidationError("ionization.lambda_stop_nm", "must exceed lambda_start_nm > 0");
    if (!(io.numerical_aperture > 0.0 && io.numerical_aperture < 1.5))
        throw ValidationError("ionization.numerical_aperture", "must be in (0, 1.5)");
    if (io.time_points < 16) throw ValidationError("ionization.time_points", "must be >= 16");
    if (!(io.noise_fraction >= 0.0)) throw ValidationError("ionization.noise_fraction", "must be >= 0");

    if (s.crc.n_events < 1) throw ValidationError("crc.n_events", "must be >= 1");
    if (!(s.crc.window_ms > 0.0)) throw ValidationError("crc.window_ms", "must be > 0");
    if (!(s.crc.event_period_ms >= s.crc.window_ms))
        throw ValidationError("crc.event_period_ms", "must be >= window_ms");
    if (!(s.crc.undepleted_ou_sigma_MHz >= 0.0)) throw ValidationError("crc.undepleted_ou_sigma_MHz", "must be >= 0");
    if (!(s.crc.ou_tau_ms > 0.0)) throw ValidationError("crc.ou_tau_ms", "must be > 0");
    if (s.crc.max_threshold < 1) throw ValidationError("crc.max_threshold", "must be >= 1");

    if (s.ssr.shots < 2) throw ValidationError("ssr.shots", "must be >= 2");
    if (s.ssr.repetitions < 1) throw ValidationError("ssr.repetitions", "must be >= 1");
    if (!(s.ssr.flip_probability >= 0.0 && s.ssr.flip_probability <= 1.0))
        throw ValidationError("ssr.flip_probability", "must be in [0, 1]");
    if (!(s.ssr.bright_kcps > s.ssr.dark_kcps && s.ssr.dark_kcps >= 0.0))
        throw ValidationError("ssr.bright_kcps", "must exceed dark_kcps >= 0");

    const auto& co = s.coherence;
    if (!(co.electron_T2_ms > 0.0)) throw ValidationError("coherence.electron_T2_ms", "must be > 0");
    if (!(co.nuclear_T2_ms > 0.0)) throw ValidationError("coherence.nuclear_T2_ms", "must be > 0");
    if (co.points < 5) throw ValidationError("coherence.points", "must be >= 5");
    for (auto N : co.orders_N)
        if (!(N >= 1.0)) throw ValidationError("coherence.orders_N", "pulse numbers must be >= 1");

    if (s.sweep) {
        if (s.sweep->values.empty()) throw ValidationError("sweep.values", "must not be empty");
        Scenario probe = s;
        probe.sweep.reset();
        set_parameter(probe, s.sweep->parameter, s.sweep->values.front());
    }
}

} // namespace v2sim::harness
