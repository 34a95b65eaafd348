#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "v2sim/core/errors.hpp"
#include "v2sim/core/material.hpp"
#include "v2sim/ionization/photoionization.hpp"
#include "v2sim/junction/depletion.hpp"
#include "v2sim/optics/ple.hpp"
#include "v2sim/trap/markov.hpp"

namespace v2sim::harness {

inline constexpr std::array<std::string_view, 9> kCommands{
    "solve-junction", "depletion-map", "iv-curve", "ple-sweep", "trap-sim", "ionization", "crc", "ssr", "coherence"};

struct SolverBlock {
    double temperature_K = 15.0;
    double bias_V = 0.0;
    std::string ionization = "complete";
    double tolerance = 1e-8;
    int max_iterations = 300;

    bool operator==(const SolverBlock&) const = default;
};

struct DepletionMapBlock {
    std::vector<double> distances_um{0.0, 2.5, 5.0, 7.5, 10.0, 11.2, 15.0, 20.0, 25.0, 30.0};
    std::vector<double> biases_V{0.0, -5.0, -10.0, -15.0, -20.0, -25.0, -30.0, -40.0, -60.0};
    std::vector<double> temperatures_K{};
    bool bisect = false;
    double search_min_V = -150.0;

    bool operator==(const DepletionMapBlock&) const = default;
};

struct IvBlock {
    std::vector<double> temperatures_K{300.0, 100.0, 15.0};
    double ideality = 1.0;
    double voltage_start_V = -5.0;
    double voltage_stop_V = 2.0;
    int voltage_points = 141;
    double reference_current_A = 0.01;

    bool operator==(const IvBlock&) const = default;
};

struct PleBlock {
    std::vector<double> biases_V{};   // empty: the solver bias only

    bool operator==(const PleBlock&) const = default;
};

using RateTriples = std::vector<std::vector<double>>;

struct TrapBlock {
    int n_states = 3;
    double spacing_MHz = 400.0;
    RateTriples rates_dark{{0, 1, 500.0}, {1, 2, 200.0}, {2, 1, 800.0}};
    RateTriples rates_repump{{0, 1, 2000.0}, {1, 0, 2000.0}, {2, 1, 2000.0}};
    RateTriples rates_resonant{{0, 1, 500.0}, {1, 2, 1000.0}, {2, 1, 100.0}};
    RateTriples rates_depleted{};

    bool operator==(const TrapBlock&) const = default;
};

struct TrapSimBlock {
    std::vector<std::string> schedule_conditions{"dark"};
    std::vector<double> schedule_durations_ms{1000.0};
    double duration_ms = 1000.0;
    int initial_state = -1;   // -1: draw from the first condition's steady state
    std::string scan_condition = "dark";
    int scans = 0;
    double dwell_per_bin_ms = 0.1;
    std::vector<double> transient_durations_ms{};
    std::string transient_initial = "resonant";
    std::string transient_pump = "dark";
    int probe_state = 1;
    int ensemble = 2000;

    bool operator==(const TrapSimBlock&) const = default;
};

struct IonizationBlock {
    std::vector<std::vector<double>> modes{{15.0, 0.6}, {35.0, 0.9}, {60.0, 0.7}, {85.0, 0.4}};
    std::string modes_file;
    double gaussian_broadening_meV = 5.0;
    double energy_step_eV = 5e-4;
    int time_points = 1 << 14;
    double time_span_sigmas = 10.0;
    std::string sigma_el_file;
    double threshold_eV = 1.31;
    double sigma_scale_cm2 = 1e-17;
    double sigma_max_eV = 2.2;
    double numerical_aperture = 0.75;
    double lambda_start_nm = 880.0;
    double lambda_stop_nm = 1200.0;
    int lambda_points = 65;
    double resonant_rate_per_nW = 0.05;
    double saturation_power_nW = 10.0;
    std::vector<double> resonant_powers_nW{};
    double resonant_power_nW = 10.0;
    double second_power_uW = 100.0;
    double second_wavelength_nm = 916.0;
    double noise_fraction = 0.0;
    bool fit_threshold = true;

    bool operator==(const IonizationBlock&) const = default;
};

struct CrcBlock {
    double peak_kcps = 24.0;
    double background_kcps = 0.1;
    double window_ms = 1.0;
    double event_period_ms = 1.0;
    int n_events = 100000;
    double linewidth_MHz = 0.0;
    double undepleted_ou_sigma_MHz = 4.6;
    double ou_tau_ms = 10.0;
    bool undepleted_trap_jumps = false;
    int max_threshold = 60;

    bool operator==(const CrcBlock&) const = default;
};

struct SsrBlock {
    double bright_kcps = 2.0;
    double dark_kcps = 0.2;
    double flip_probability = 0.002;
    int repetitions = 10;
    double window_ms = 1.0;
    int shots = 20000;
    double undepleted_detuning_sigma_MHz = 15.0;
    double linewidth_MHz = 17.0;

    bool operator==(const SsrBlock&) const = default;
};

struct CoherenceBlock {
    double electron_T2_ms = 0.4;
    double electron_beta = 1.5;
    double nuclear_T2_ms = 70.0;
    double nuclear_beta = 1.0;
    std::vector<double> orders_N{1, 2, 4, 8, 16, 32};
    double scaling_exponent = 2.0 / 3.0;
    double noise_sigma = 0.03;
    int points = 30;
    double tau_max_factor = 3.0;

    bool operator==(const CoherenceBlock&) const = default;
};

struct SweepBlock {
    std::string parameter;
    std::vector<double> values;

    bool operator==(const SweepBlock&) const = default;
};

struct Scenario {
    std::string name = "scenario";
    std::string command = "solve-junction";
    std::optional<std::uint64_t> seed;
    std::string output_dir;

    MaterialStack material{};
    junction::MeshSpec mesh{};
    SolverBlock solver{};
    junction::DefectSite site{};
    optics::DefectOpticalModel optics{};
    optics::ScanSettings scan{};
    DepletionMapBlock depletion_map{};
    IvBlock iv{};
    PleBlock ple{};
    TrapBlock trap{};
    TrapSimBlock trap_sim{};
    IonizationBlock ionization{};
    CrcBlock crc{};
    SsrBlock ssr{};
    CoherenceBlock coherence{};
    std::optional<SweepBlock> sweep;

    bool operator==(const Scenario&) const = default;
};

// Field binding shared by the parser, the serializer and the sweep setter.

template <class V>
void describe(V& v, ContactGeometry& c) {
    v("stripe_width_um", c.stripe_width_um);
    v("stripe_length_um", c.stripe_length_um);
}

template <class V>
void describe(V& v, MaterialStack& m) {
    v("metal_workfunction_eV", m.metal_workfunction_eV);
    v("band_gap_eV", m.band_gap_eV);
    v("electron_affinity_eV", m.electron_affinity_eV);
    v("refractive_index", m.refractive_index);
    v("static_relative_permittivity", m.static_relative_permittivity);
    v("Nc_m3", m.Nc_m3);
    v("Nv_m3", m.Nv_m3);
    v("dos_reference_temperature_K", m.dos_reference_temperature_K);
    v("doping_epi_cm3", m.doping_epi_cm3);
    v("doping_substrate_cm3", m.doping_substrate_cm3);
    v("mobility_epi", m.mobility_epi);
    v("mobility_substrate", m.mobility_substrate);
    v("m_eff_e_kg", m.m_eff_e_kg);
    v("m_eff_h_kg", m.m_eff_h_kg);
    v("donor_ionization_energy_eV", m.donor_ionization_energy_eV);
    v("donor_degeneracy", m.donor_degeneracy);
    v("epi_thickness_um", m.epi_thickness_um);
    v("substrate_thickness_um", m.substrate_thickness_um);
    v.table("contact", m.contact);
}

template <class V>
void describe(V& v, junction::MeshSpec& m) {
    v("nx", m.nx);
    v("nz", m.nz);
    v("lateral_extent_um", m.lateral_extent_um);
    v("edge_grading", m.edge_grading);
}

template <class V>
void describe(V& v, SolverBlock& s) {
    v("temperature_K", s.temperature_K);
    v("bias_V", s.bias_V);
    v("ionization", s.ionization);
    v("tolerance", s.tolerance);
    v("max_iterations", s.max_iterations);
}

template <class V>
void describe(V& v, junction::DefectSite& s) {
    v("lateral_distance_um", s.lateral_distance_um);
    v("depth_um", s.depth_um);
}

template <class V>
void describe(V& v, optics::BroadeningLaw& b) {
    v("low_density_cm3", b.low_density_cm3);
    v("high_density_cm3", b.high_density_cm3);
    v("total_fwhm_low_MHz", b.total_fwhm_low_MHz);
    v("total_fwhm_high_MHz", b.total_fwhm_high_MHz);
    v("steepness_per_decade", b.steepness_per_decade);
}

template <class V>
void describe(V& v, optics::DefectOpticalModel& m) {
    v("zpl_energy_eV", m.zpl_energy_eV);
    v("excited_state_splitting_GHz", m.excited_state_splitting_GHz);
    v("lifetime_A1_ns", m.lifetime_A1_ns);
    v("lifetime_A2_ns", m.lifetime_A2_ns);
    v("weight_A1", m.weight_A1);
    v("weight_A2", m.weight_A2);
    v("stark_perp_quadratic", m.stark_perp_quadratic);
    v("stark_par_linear", m.stark_par_linear);
    v("saturation_power_nW", m.saturation_power_nW);
    v.table("broadening", m.broadening);
}

template <class V>
void describe(V& v, optics::ScanSettings& s) {
    v("start_MHz", s.grid.start_MHz);
    v("stop_MHz", s.grid.stop_MHz);
    v("points", s.grid.points);
    v("power_nW", s.power_nW);
    v("peak_counts", s.peak_counts);
    v("background_counts", s.background_counts);
    v("poisson_noise", s.poisson_noise);
}

template <class V>
void describe(V& v, DepletionMapBlock& d) {
    v("distances_um", d.distances_um);
    v("biases_V", d.biases_V);
    v("temperatures_K", d.temperatures_K);
    v("bisect", d.bisect);
    v("search_min_V", d.search_min_V);
}

template <class V>
void describe(V& v, IvBlock& b) {
    v("temperatures_K", b.temperatures_K);
    v("ideality", b.ideality);
    v("voltage_start_V", b.voltage_start_V);
    v("voltage_stop_V", b.voltage_stop_V);
    v("voltage_points", b.voltage_points);
    v("reference_current_A", b.reference_current_A);
}

template <class V>
void describe(V& v, PleBlock& b) {
    v("biases_V", b.biases_V);
}

template <class V>
void describe(V& v, TrapBlock& t) {
    v("n_states", t.n_states);
    v("spacing_MHz", t.spacing_MHz);
    v("rates_dark", t.rates_dark);
    v("rates_repump", t.rates_repump);
    v("rates_resonant", t.rates_resonant);
    v("rates_depleted", t.rates_depleted);
}

template <class V>
void describe(V& v, TrapSimBlock& t) {
    v("schedule_conditions", t.schedule_conditions);
    v("schedule_durations_ms", t.schedule_durations_ms);
    v("duration_ms", t.duration_ms);
    v("initial_state", t.initial_state);
    v("scan_condition", t.scan_condition);
    v("scans", t.scans);
    v("dwell_per_bin_ms", t.dwell_per_bin_ms);
    v("transient_durations_ms", t.transient_durations_ms);
    v("transient_initial", t.transient_initial);
    v("transient_pump", t.transient_pump);
    v("probe_state", t.probe_state);
    v("ensemble", t.ensemble);
}

template <class V>
void describe(V& v, IonizationBlock& b) {
    v("modes", b.modes);
    v("modes_file", b.modes_file);
    v("gaussian_broadening_meV", b.gaussian_broadening_meV);
    v("energy_step_eV", b.energy_step_eV);
    v("time_points", b.time_points);
    v("time_span_sigmas", b.time_span_sigmas);
    v("sigma_el_file", b.sigma_el_file);
    v("threshold_eV", b.threshold_eV);
    v("sigma_scale_cm2", b.sigma_scale_cm2);
    v("sigma_max_eV", b.sigma_max_eV);
    v("numerical_aperture", b.numerical_aperture);
    v("lambda_start_nm", b.lambda_start_nm);
    v("lambda_stop_nm", b.lambda_stop_nm);
    v("lambda_points", b.lambda_points);
    v("resonant_rate_per_nW", b.resonant_rate_per_nW);
    v("saturation_power_nW", b.saturation_power_nW);
    v("resonant_powers_nW", b.resonant_powers_nW);
    v("resonant_power_nW", b.resonant_power_nW);
    v("second_power_uW", b.second_power_uW);
    v("second_wavelength_nm", b.second_wavelength_nm);
    v("noise_fraction", b.noise_fraction);
    v("fit_threshold", b.fit_threshold);
}

template <class V>
void describe(V& v, CrcBlock& b) {
    v("peak_kcps", b.peak_kcps);
    v("background_kcps", b.background_kcps);
    v("window_ms", b.window_ms);
    v("event_period_ms", b.event_period_ms);
    v("n_events", b.n_events);
    v("linewidth_MHz", b.linewidth_MHz);
    v("undepleted_ou_sigma_MHz", b.undepleted_ou_sigma_MHz);
    v("ou_tau_ms", b.ou_tau_ms);
    v("undepleted_trap_jumps", b.undepleted_trap_jumps);
    v("max_threshold", b.max_threshold);
}

template <class V>
void describe(V& v, SsrBlock& b) {
    v("bright_kcps", b.bright_kcps);
    v("dark_kcps", b.dark_kcps);
    v("flip_probability", b.flip_probability);
    v("repetitions", b.repetitions);
    v("window_ms", b.window_ms);
    v("shots", b.shots);
    v("undepleted_detuning_sigma_MHz", b.undepleted_detuning_sigma_MHz);
    v("linewidth_MHz", b.linewidth_MHz);
}

template <class V>
void describe(V& v, CoherenceBlock& b) {
    v("electron_T2_ms", b.electron_T2_ms);
    v("electron_beta", b.electron_beta);
    v("nuclear_T2_ms", b.nuclear_T2_ms);
    v("nuclear_beta", b.nuclear_beta);
    v("orders_N", b.orders_N);
    v("scaling_exponent", b.scaling_exponent);
    v("noise_sigma", b.noise_sigma);
    v("points", b.points);
    v("tau_max_factor", b.tau_max_factor);
}

template <class V>
void describe(V& v, SweepBlock& s) {
    v("parameter", s.parameter);
    v("values", s.values);
}

template <class V>
void describe(V& v, Scenario& s) {
    v("name", s.name);
    v("command", s.command);
    v("seed", s.seed);
    v("output_dir", s.output_dir);
    v.table("material", s.material);
    v.table("mesh", s.mesh);
    v.table("solver", s.solver);
    v.table("site", s.site);
    v.table("optics", s.optics);
    v.table("scan", s.scan);
    v.table("depletion_map", s.depletion_map);
    v.table("iv", s.iv);
    v.table("ple", s.ple);
    v.table("trap", s.trap);
    v.table("trap_sim", s.trap_sim);
    v.table("ionization", s.ionization);
    v.table("crc", s.crc);
    v.table("ssr", s.ssr);
    v.table("coherence", s.coherence);
    v.table("sweep", s.sweep);
}

inline bool is_stochastic(const Scenario& s) {
    return s.command == "ple-sweep" || s.command == "trap-sim" || s.command == "crc" || s.command == "ssr" ||
           s.command == "coherence" || (s.command == "ionization" && s.ionization.noise_fraction > 0.0);
}

inline DonorModel donor_model(const SolverBlock& s) {
    if (s.ionization == "complete") return DonorModel::Complete;
    if (s.ionization == "incomplete") return DonorModel::Incomplete;
    throw ValidationError("solver.ionization", "must be \"complete\" or \"incomplete\", got \"" + s.ionization + "\"");
}

inline trap::Condition parse_condition(const std::string& s, const std::string& path) {
    if (auto c = trap::condition_from_string(s)) return *c;
    throw ValidationError(path, "unknown illumination condition \"" + s + "\"");
}

inline trap::Generator generator_from_triples(int n, const RateTriples& t, const std::string& path) {
    std::vector<std::array<double, 3>> r;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const std::string p = path + "[" + std::to_string(k) + "]";
        if (t[k].size() != 3) throw ValidationError(p, "expected [from, to, rate_per_s]");
        const double from = t[k][0], to = t[k][1];
        if (from != std::floor(from) || to != std::floor(to) || from < 0 || to < 0 || from >= n || to >= n || from == to)
            throw ValidationError(p, "state indices must be distinct integers in [0, n_states)");
        if (!(t[k][2] >= 0.0)) throw ValidationError(p, "rate must be >= 0");
        r.push_back({from, to, t[k][2]});
    }
    return trap::generator_from_rates(n, r);
}

inline trap::TrapMarkovModel trap_model(const TrapBlock& b) {
    if (b.n_states < 1) throw ValidationError("trap.n_states", "must be >= 1");
    trap::TrapMarkovModel m;
    m.n_states = b.n_states;
    m.line_shift_MHz = trap::equally_spaced_shifts(b.n_states, b.spacing_MHz);
    m.generators[trap::Condition::Dark] = generator_from_triples(b.n_states, b.rates_dark, "trap.rates_dark");
    m.generators[trap::Condition::Repump] = generator_from_triples(b.n_states, b.rates_repump, "trap.rates_repump");
    m.generators[trap::Condition::Resonant] =
        generator_from_triples(b.n_states, b.rates_resonant, "trap.rates_resonant");
    m.generators[trap::Condition::Depleted] =
        generator_from_triples(b.n_states, b.rates_depleted, "trap.rates_depleted");
    trap::validate(m);
    return m;
}

} // namespace v2sim::harness
