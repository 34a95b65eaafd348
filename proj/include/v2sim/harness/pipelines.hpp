#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "v2sim/core/errors.hpp"
#include "v2sim/core/material.hpp"
#include "v2sim/harness/config.hpp"
#include "v2sim/io/csv.hpp"
#include "v2sim/ionization/photoionization.hpp"
#include "v2sim/junction/depletion.hpp"
#include "v2sim/junction/diode.hpp"
#include "v2sim/junction/mesh.hpp"
#include "v2sim/junction/poisson.hpp"
#include "v2sim/optics/lineshape.hpp"
#include "v2sim/optics/ple.hpp"
#include "v2sim/optics/stark.hpp"
#include "v2sim/readout/readout.hpp"
#include "v2sim/trap/markov.hpp"

namespace v2sim::harness {

namespace fs = std::filesystem;

struct EmittedFile {
    std::string name;
    std::size_t rows = 0;
};

using Summary = std::vector<std::pair<std::string, double>>;

struct PipelineResult {
    std::vector<EmittedFile> files;
    Summary summary;
};

/// Collects the CSVs of one run so the manifest can list them.
class Output {
public:
    explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void write(const std::string& name, const io::CsvTable& t) {
        t.write(dir_ / name);
        files_.push_back({name, t.row_count()});
    }

    const fs::path& dir() const { return dir_; }
    const std::vector<EmittedFile>& files() const { return files_; }

private:
    fs::path dir_;
    std::vector<EmittedFile> files_;
};

/// SplitMix64 of (base, stream): independent reproducible sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline junction::SolverOptions solver_options(const Scenario& s) {
    junction::SolverOptions o;
    o.ionization = donor_model(s.solver);
    o.tolerance = s.solver.tolerance;
    o.max_iterations = s.solver.max_iterations;
    return o;
}

/// Zero-power line FWHM (MHz) at local electron density n: Voigt of the composite
/// Lorentzian and the density-dependent excess Gaussian.
inline double line_fwhm_MHz(double n_cm3, const optics::DefectOpticalModel& m) {
    return optics::voigt_fwhm(optics::effective_two_laser_linewidth(m, 0.0), optics::excess_broadening(n_cm3, m));
}

struct PlePoint {
    double bias_V = 0.0;
    double E_par_MVm = 0.0;
    double E_perp_MVm = 0.0;
    double n_cm3 = 0.0;
    double predicted_GHz = 0.0;
    double center_GHz = 0.0;
    double fwhm_MHz = 0.0;
    bool reliable = false;
    optics::PleSpectrum spectrum;
};

/// Solve at `bias`, read the field and density at the defect, synthesize and fit one PLE
/// scan. The scan window follows the line in 50 MHz steps.
inline PlePoint ple_point(const Scenario& s, const junction::Mesh2D& mesh, double bias, std::uint64_t seed,
                          std::optional<junction::FieldSolution>& warm) {
    auto opt = solver_options(s);
    if (warm) opt.initial_guess = &*warm;
    auto sol = junction::solve_poisson(s.material, mesh, Volts{bias}, Kelvin{s.solver.temperature_K}, opt);
    PlePoint p;
    p.bias_V = bias;
    const auto f = junction::field_at(sol, s.site);
    p.E_par_MVm = f.parallel_MVm;
    p.E_perp_MVm = f.perpendicular_MVm;
    p.n_cm3 = junction::density_at(sol, s.site);
    p.predicted_GHz = optics::stark_detuning(p.E_par_MVm, p.E_perp_MVm, s.optics);
    warm = std::move(sol);

    optics::ScanSettings scan = s.scan;
    const double shift = 50.0 * std::round(20.0 * p.predicted_GHz);
    scan.grid.start_MHz += shift;
    scan.grid.stop_MHz += shift;
    p.spectrum = optics::synthesize_ple_scan(s.optics, p.E_par_MVm, p.E_perp_MVm, p.n_cm3, scan, seed);
    p.center_GHz = 1e-3 * p.spectrum.fit.center_MHz;
    p.fwhm_MHz = p.spectrum.fit.fwhm_MHz;
    p.reliable = p.spectrum.fit.reliable;
    return p;
}

inline io::CsvTable summary_table(const Summary& s) {
    io::CsvTable t({"key", "value"});
    for (const auto& [k, v] : s) t.add_row({k, v});
    return t;
}

inline std::uint64_t require_seed(const Scenario& s) {
    if (!s.seed) throw ValidationError("seed", "required for stochastic command " + s.command);
    return *s.seed;
}

inline std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n > 1 ? a + (b - a) * i / (n - 1) : a;
    return v;
}

// ---------------------------------------------------------------------------------------

inline Summary run_solve_junction(const Scenario& s, Output& out) {
    const auto mesh = junction::make_device_mesh(s.material, s.mesh);
    const auto sol = junction::solve_poisson(s.material, mesh, Volts{s.solver.bias_V}, Kelvin{s.solver.temperature_K},
                                             solver_options(s));
    io::CsvTable field({"x_um", "z_um", "phi_V", "n_cm3", "Ex_MVm", "Ez_MVm"});
    for (std::size_t j = 0; j < mesh.nz(); ++j)
        for (std::size_t i = 0; i < mesh.nx(); ++i) {
            const auto k = mesh.index(i, j);
            field.add_row({mesh.x_um[i], mesh.z_um[j], sol.phi_V[k],
                           sol.n_cm3[k], sol.Ex_MVm[k], sol.Ez_MVm[k]});
        }
    out.write("field.csv", field);

    io::CsvTable contour({"x_um", "z_um", "branch_id"});
    const auto lines = junction::depletion_boundary(sol);
    for (std::size_t b = 0; b < lines.size(); ++b)
        for (const auto& p : lines[b]) contour.add_row({p.x_um, p.z_um, static_cast<long long>(b)});
    out.write("contour.csv", contour);

    const auto f = junction::field_at(sol, s.site);
    const double n_site = junction::density_at(sol, s.site);
    return {{"iterations", sol.report.iterations},
            {"residual", sol.report.residual},
            {"gauss_law_error", sol.report.gauss_law_error},
            {"coarse_edge_warning", sol.report.coarse_edge_warning ? 1.0 : 0.0},
            {"depleted_area_um2", junction::depleted_area(sol)},
            {"site_E_par_MVm", f.parallel_MVm},
            {"site_E_perp_MVm", f.perpendicular_MVm},
            {"site_n_cm3", n_site},
            {"site_depleted", n_site < junction::kDepletionThresholdCm3 ? 1.0 : 0.0}};
}

inline Summary run_depletion_map(const Scenario& s, Output& out) {
    const auto& d = s.depletion_map;
    if (d.distances_um.empty()) throw ValidationError("depletion_map.distances_um", "must not be empty");
    if (d.biases_V.empty()) throw ValidationError("depletion_map.biases_V", "must not be empty");
    const auto mesh = junction::make_device_mesh(s.material, s.mesh);
    const auto temps = d.temperatures_K.empty() ? std::vector<double>{s.solver.temperature_K} : d.temperatures_K;
    std::vector<double> biases = d.biases_V;
    std::sort(biases.begin(), biases.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });

    io::CsvTable grid({"distance_um", "bias_V", "fwhm_MHz", "depleted_flag", "temperature_K", "n_cm3"});
    io::CsvTable area({"temperature_K", "bias_V", "area_um2"});
    io::CsvTable contours({"temperature_K", "bias_V", "x_um", "z_um", "branch_id"});
    io::CsvTable bulk({"temperature_K", "n_epi_cm3", "n_substrate_cm3", "ionized_fraction_epi"});
    io::CsvTable ud({"temperature_K", "distance_um", "ud_grid_V"});
    Summary summary;

    for (double T : temps) {
        const auto model = donor_model(s.solver);
        const auto be = equilibrium_bulk_density(s.material, Layer::Epi, Kelvin{T}, model);
        const auto bs = equilibrium_bulk_density(s.material, Layer::Substrate, Kelvin{T}, model);
        bulk.add_row({T, be.electron_density.value, bs.electron_density.value, be.ionized_fraction});

        std::vector<double> first_depleted(d.distances_um.size(), std::numeric_limits<double>::quiet_NaN());
        std::optional<junction::FieldSolution> warm;
        for (double V : biases) {
            auto opt = solver_options(s);
            if (warm) opt.initial_guess = &*warm;
            auto sol = junction::solve_poisson(s.material, mesh, Volts{V}, Kelvin{T}, opt);
            area.add_row({T, V, junction::depleted_area(sol)});
            const auto lines = junction::depletion_boundary(sol);
            for (std::size_t b = 0; b < lines.size(); ++b)
                for (const auto& p : lines[b]) contours.add_row({T, V, p.x_um, p.z_um, static_cast<long long>(b)});
            for (std::size_t k = 0; k < d.distances_um.size(); ++k) {
                const junction::DefectSite site{d.distances_um[k], s.site.depth_um};
                junction::validate(site, mesh);
                const double n = junction::density_at(sol, site);
                const bool dep = n < junction::kDepletionThresholdCm3;
                if (dep && std::isnan(first_depleted[k])) first_depleted[k] = V;
                grid.add_row({d.distances_um[k], V, line_fwhm_MHz(n, s.optics), static_cast<long long>(dep), T, n});
            }
            warm = std::move(sol);
        }
        for (std::size_t k = 0; k < d.distances_um.size(); ++k) ud.add_row({T, d.distances_um[k], first_depleted[k]});

        if (d.bisect) {
            junction::DepletionSearch search;
            search.most_negative_V = d.search_min_V;
            const auto r = junction::depletion_voltage(s.material, mesh, s.site, Kelvin{T}, search, solver_options(s));
            const std::string tag = "_T" + io::format_double(T);
            summary.emplace_back("ud_site_V" + tag, r.status == junction::DepletionStatus::NotDepletedInRange
                                                       ? std::numeric_limits<double>::quiet_NaN()
                                                       : r.voltage_V);
            summary.emplace_back("ud_site_status" + tag, static_cast<double>(static_cast<int>(r.status)));
        }
    }
    out.write("grid.csv", grid);
    out.write("area.csv", area);
    out.write("contours.csv", contours);
    out.write("bulk.csv", bulk);
    out.write("ud.csv", ud);
    summary.emplace_back("grid_points", static_cast<double>(grid.row_count()));
    return summary;
}

inline Summary run_iv_curve(const Scenario& s, Output& out) {
    const auto& b = s.iv;
    const auto volts = linspace(b.voltage_start_V, b.voltage_stop_V, b.voltage_points);
    io::CsvTable iv({"temperature_K", "voltage_V", "current_A"});
    io::CsvTable fwd({"temperature_K", "forward_voltage_V", "current_A"});
    Summary summary;
    for (double T : b.temperatures_K) {
        const auto I = junction::iv_curve(s.material, Kelvin{T}, b.ideality, volts);
        for (std::size_t k = 0; k < volts.size(); ++k) iv.add_row({T, volts[k], I[k]});
        const double vf =
            junction::forward_voltage_for_current(s.material, Kelvin{T}, b.ideality, b.reference_current_A).value;
        fwd.add_row({T, vf, b.reference_current_A});
        summary.emplace_back("vf_T" + io::format_double(T), vf);
    }
    out.write("iv.csv", iv);
    out.write("forward.csv", fwd);
    return summary;
}

inline Summary run_ple_sweep(const Scenario& s, Output& out) {
    const std::uint64_t seed = require_seed(s);
    const auto mesh = junction::make_device_mesh(s.material, s.mesh);
    junction::validate(s.site, mesh);
    std::vector<double> biases = s.ple.biases_V.empty() ? std::vector<double>{s.solver.bias_V} : s.ple.biases_V;

    io::CsvTable scans({"bias_V", "detuning_MHz", "counts"});
    io::CsvTable table({"bias_V", "E_par_MVm", "E_perp_MVm", "n_cm3", "predicted_GHz", "center_GHz", "fwhm_MHz",
                        "reliable"});
    std::vector<PlePoint> pts;
    std::optional<junction::FieldSolution> warm;
    for (std::size_t k = 0; k < biases.size(); ++k) {
        auto p = ple_point(s, mesh, biases[k], derive_seed(seed, k), warm);
        for (std::size_t i = 0; i < p.spectrum.detuning_MHz.size(); ++i)
            scans.add_row({p.bias_V, p.spectrum.detuning_MHz[i], p.spectrum.counts[i]});
        table.add_row({p.bias_V, p.E_par_MVm, p.E_perp_MVm, p.n_cm3, p.predicted_GHz, p.center_GHz, p.fwhm_MHz,
                       static_cast<long long>(p.reliable)});
        pts.push_back(std::move(p));
    }
    out.write("scans.csv", scans);
    out.write("ple_summary.csv", table);

    Summary summary;
    if (pts.size() == 1) {
        summary = {{"center_GHz", pts[0].center_GHz},
                   {"fwhm_MHz", pts[0].fwhm_MHz},
                   {"E_par_MVm", pts[0].E_par_MVm},
                   {"E_perp_MVm", pts[0].E_perp_MVm},
                   {"n_cm3", pts[0].n_cm3},
                   {"reliable", pts[0].reliable ? 1.0 : 0.0}};
    }
    std::vector<double> ep, eq, dc;
    for (const auto& p : pts)
        if (p.reliable) {
            ep.push_back(p.E_par_MVm);
            eq.push_back(p.E_perp_MVm);
            dc.push_back(p.center_GHz);
        }
    if (dc.size() >= 3) {
        const auto f = optics::fit_stark_coefficients(ep, eq, dc);
        io::CsvTable st({"quadratic_GHz_per_MVm2", "linear_GHz_per_MVm", "offset_GHz", "points"});
        st.add_row({f.quadratic, f.linear, f.offset, static_cast<long long>(dc.size())});
        out.write("stark_fit.csv", st);
        summary.emplace_back("stark_quadratic", f.quadratic);
        summary.emplace_back("stark_linear", f.linear);
    }
    return summary;
}

inline Summary run_trap_sim(const Scenario& s, Output& out) {
    const std::uint64_t seed = require_seed(s);
    const auto tm = trap_model(s.trap);
    const auto& b = s.trap_sim;
    std::vector<trap::ScheduleSegment> schedule;
    for (std::size_t k = 0; k < b.schedule_conditions.size(); ++k)
        schedule.push_back({parse_condition(b.schedule_conditions[k], "trap_sim.schedule_conditions"),
                            b.schedule_durations_ms[k]});
    const std::optional<int> init = b.initial_state >= 0 ? std::optional<int>(b.initial_state) : std::nullopt;
    const auto tr = trap::simulate_trajectory(tm, schedule, b.duration_ms, derive_seed(seed, 0), init);

    io::CsvTable traj({"t_ms", "state"});
    for (std::size_t k = 0; k < tr.states.size(); ++k) traj.add_row({tr.times_ms[k], static_cast<long long>(tr.states[k])});
    out.write("trajectory.csv", traj);

    const auto occ = trap::occupancy(tr, tm.n_states);
    const auto st = trap::stationary_distribution(tm.generator(schedule.front().condition));
    io::CsvTable occt({"state", "occupancy", "stationary", "line_shift_MHz", "mean_dwell_ms", "visits"});
    Summary summary;
    for (int j = 0; j < tm.n_states; ++j) {
        const auto dw = trap::dwell_times(tr, j);
        double mean = 0.0;
        for (double x : dw) mean += x;
        mean = dw.empty() ? std::numeric_limits<double>::quiet_NaN() : mean / static_cast<double>(dw.size());
        const auto ju = static_cast<std::size_t>(j);
        occt.add_row({static_cast<long long>(j), occ[ju], st.distribution[ju], tm.line_shift_MHz[ju], mean,
                      static_cast<long long>(dw.size())});
        summary.emplace_back("occupancy_" + std::to_string(j), occ[ju]);
    }
    out.write("occupancy.csv", occt);
    summary.emplace_back("jumps", static_cast<double>(tr.states.size() - 1));

    if (b.scans > 0) {
        trap::TrapScanSettings ts;
        ts.scan = s.scan;
        ts.n_scans = b.scans;
        ts.dwell_per_bin_ms = b.dwell_per_bin_ms;
        const auto res = trap::ple_with_trap(s.optics, tm, parse_condition(b.scan_condition, "trap_sim.scan_condition"),
                                             ts, derive_seed(seed, 1), init);
        io::CsvTable sc({"scan_index", "detuning_MHz", "counts"});
        std::vector<std::string> hdr{"scan_index", "center_MHz", "fwhm_MHz", "reliable"};
        for (int j = 0; j < tm.n_states; ++j) hdr.push_back("fraction_state_" + std::to_string(j));
        io::CsvTable fits(hdr);
        for (std::size_t k = 0; k < res.size(); ++k) {
            const auto& sp = res[k].spectrum;
            for (std::size_t i = 0; i < sp.detuning_MHz.size(); ++i)
                sc.add_row({static_cast<long long>(k), sp.detuning_MHz[i], sp.counts[i]});
            std::vector<io::Cell> row{static_cast<long long>(k), sp.fit.center_MHz, sp.fit.fwhm_MHz,
                                      static_cast<long long>(sp.fit.reliable)};
            for (double f : res[k].state_fraction) row.push_back(f);
            fits.add_row(row);
        }
        out.write("scans.csv", sc);
        out.write("scan_fits.csv", fits);
    }

    if (!b.transient_durations_ms.empty()) {
        trap::TransientProtocol p;
        p.initial = parse_condition(b.transient_initial, "trap_sim.transient_initial");
        p.pump = parse_condition(b.transient_pump, "trap_sim.transient_pump");
        p.durations_ms = b.transient_durations_ms;
        p.probe_state = b.probe_state;
        p.ensemble = b.ensemble;
        const auto r = trap::transient_recovery(tm, p, derive_seed(seed, 2));
        io::CsvTable tt({"duration_ms", "occupancy"});
        for (std::size_t k = 0; k < r.durations_ms.size(); ++k) tt.add_row({r.durations_ms[k], r.occupancy[k]});
        out.write("transient.csv", tt);
        const double slow = trap::dominant_relaxation_rate_per_ms(
            tm.generator(p.pump), trap::stationary_distribution(tm.generator(p.initial)).distribution, p.probe_state);
        io::CsvTable tf({"fitted_rate_per_ms", "rate_stderr_per_ms", "amplitude", "plateau", "fit_ok",
                         "eigen_rate_per_ms"});
        tf.add_row({r.fitted_rate_per_ms, r.rate_stderr_per_ms, r.amplitude, r.plateau,
                    static_cast<long long>(r.fit_ok), slow});
        out.write("transient_fit.csv", tf);
        summary.emplace_back("transient_rate_per_ms", r.fitted_rate_per_ms);
        summary.emplace_back("eigen_rate_per_ms", slow);
    }
    return summary;
}

inline ionization::VibrationalModeSet mode_set(const LoadedScenario& ls) {
    const auto& b = ls.scenario.ionization;
    ionization::VibrationalModeSet v;
    v.gaussian_broadening_meV = b.gaussian_broadening_meV;
    if (!b.modes_file.empty()) {
        const auto csv = io::read_numeric_csv(ls.resolve(b.modes_file));
        const auto& e = csv.column("energy_meV");
        const auto& sk = csv.column("huang_rhys");
        for (std::size_t k = 0; k < e.size(); ++k) v.modes.push_back({e[k], sk[k]});
    } else {
        for (const auto& m : b.modes) v.modes.push_back({m[0], m[1]});
    }
    ionization::validate(v);
    return v;
}

inline ionization::ElectronicCrossSection electronic_cross_section(const LoadedScenario& ls) {
    const auto& b = ls.scenario.ionization;
    if (b.sigma_el_file.empty()) return ionization::sqrt_onset_cross_section(b.threshold_eV, b.sigma_scale_cm2, b.sigma_max_eV);
    const auto csv = io::read_numeric_csv(ls.resolve(b.sigma_el_file));
    ionization::ElectronicCrossSection s;
    s.energy_eV = csv.column("energy_eV");
    s.sigma_cm2 = csv.column("sigma_cm2");
    s.threshold_eV = b.threshold_eV;
    ionization::validate(s);
    return s;
}

inline Summary run_ionization(const LoadedScenario& ls, Output& out) {
    const auto& s = ls.scenario;
    const auto& b = s.ionization;
    const auto v = mode_set(ls);
    ionization::TimeGrid tg;
    tg.points = b.time_points;
    tg.span_sigmas = b.time_span_sigmas;
    const auto A = ionization::spectral_function(v, ionization::default_energy_grid(v, b.energy_step_eV), tg);
    io::CsvTable spec({"energy_eV", "A_per_eV"});
    for (std::size_t i = 0; i < A.energy_eV.size(); ++i) spec.add_row({A.energy_eV[i], A.value[i]});
    out.write("spectral.csv", spec);

    const auto sel = electronic_cross_section(ls);
    const auto lambdas = linspace(b.lambda_start_nm, b.lambda_stop_nm, b.lambda_points);
    std::vector<double> energies;
    for (auto it = lambdas.rbegin(); it != lambdas.rend(); ++it) energies.push_back(photon_energy_eV(*it));
    const auto pi = ionization::convolve_cross_section(sel, A, energies);
    io::CsvTable cs({"energy_eV", "sigma_el_cm2", "sigma_pi_cm2"});
    for (std::size_t i = 0; i < pi.energy_eV.size(); ++i) cs.add_row({pi.energy_eV[i], sel(pi.energy_eV[i]), pi.sigma_cm2[i]});
    out.write("cross_section.csv", cs);

    const auto curve = ionization::rate_curve(pi, lambdas, b.numerical_aperture);
    auto norm = curve.normalized();
    if (b.noise_fraction > 0.0) {
        std::mt19937_64 rng(derive_seed(require_seed(s), 0));
        std::normal_distribution<double> g(0.0, 1.0);
        for (auto& x : norm) x += b.noise_fraction * g(rng);
    }
    io::CsvTable rate({"lambda_nm", "gamma_per_uW", "normalized"});
    for (std::size_t i = 0; i < lambdas.size(); ++i) rate.add_row({lambdas[i], curve.gamma_per_uW[i], norm[i]});
    out.write("rate.csv", rate);

    ionization::TwoPhotonModel tp{b.resonant_rate_per_nW, b.saturation_power_nW, curve};
    const double gamma2 = ionization::interpolate_rate(curve, b.second_wavelength_nm);
    Summary summary{{"lambda_nm", b.second_wavelength_nm},
                    {"gamma_per_uW", gamma2},
                    {"normalized", curve.gamma_max_per_uW > 0.0 ? gamma2 / curve.gamma_max_per_uW : 0.0},
                    {"gamma_max_per_uW", curve.gamma_max_per_uW},
                    {"two_photon_rate_Hz",
                     ionization::two_photon_rate(b.resonant_power_nW, b.second_power_uW, b.second_wavelength_nm, tp)}};

    if (!b.resonant_powers_nW.empty()) {
        io::CsvTable t({"resonant_power_nW", "second_power_uW", "rate_Hz", "resonant_only_Hz", "excited_occupation"});
        for (double P : b.resonant_powers_nW)
            t.add_row({P, b.second_power_uW, ionization::two_photon_rate(P, b.second_power_uW, b.second_wavelength_nm, tp),
                       ionization::two_photon_rate(P, 0.0, b.second_wavelength_nm, tp),
                       ionization::excited_occupation(P, b.saturation_power_nW)});
        out.write("twophoton.csv", t);
    }

    if (b.fit_threshold) {
        const auto f = ionization::fit_fermi_threshold(lambdas, norm);
        io::CsvTable t({"threshold_nm", "threshold_stderr_nm", "width_nm", "amplitude", "baseline", "width_diverged"});
        t.add_row({f.threshold_nm, std::sqrt(std::max(0.0, f.covariance(0, 0))), f.width_nm, f.amplitude, f.baseline,
                   static_cast<long long>(f.width_diverged)});
        out.write("fermi_fit.csv", t);
        summary.emplace_back("threshold_nm", f.threshold_nm);
    }
    return summary;
}

/// mu + 3 sigma of the counts when the laser sits one half-width off the line.
inline long long crc_threshold(const CrcBlock& b, double fwhm_MHz) {
    const double mu = b.window_ms * (b.background_kcps + b.peak_kcps * readout::lorentz_unit(0.5 * fwhm_MHz, fwhm_MHz));
    return readout::threshold_for_confidence(mu, std::sqrt(mu));
}

inline Summary run_crc(const Scenario& s, Output& out) {
    const std::uint64_t seed = require_seed(s);
    const auto& b = s.crc;
    readout::CrcSettings cs;
    cs.peak_kcps = b.peak_kcps;
    cs.background_kcps = b.background_kcps;
    cs.window_ms = b.window_ms;
    cs.event_period_ms = b.event_period_ms;
    cs.n_events = static_cast<std::size_t>(b.n_events);
    cs.linewidth_MHz = b.linewidth_MHz;
    const double fwhm = b.linewidth_MHz > 0.0 ? b.linewidth_MHz : optics::effective_two_laser_linewidth(s.optics, 0.0);
    const long long thr = crc_threshold(b, fwhm);

    readout::DiffusionModel frozen;
    readout::DiffusionModel wander;
    wander.mode = readout::DiffusionMode::OuPlusJumps;
    wander.ou_sigma_MHz = b.undepleted_ou_sigma_MHz;
    wander.ou_tau_ms = b.ou_tau_ms;
    if (b.undepleted_trap_jumps) wander.jumps = readout::TrapJumps{trap_model(s.trap), trap::Condition::Dark};

    const auto dep = readout::simulate_crc(s.optics, frozen, cs, derive_seed(seed, 1));
    const auto und = readout::simulate_crc(s.optics, wander, cs, derive_seed(seed, 2));

    io::CsvTable hist({"counts", "frequency", "scenario_label"});
    for (const auto& [label, rec] : {std::pair{"depleted", &dep}, std::pair{"undepleted", &und}}) {
        const auto h = readout::histogram(readout::counts_of(*rec));
        for (std::size_t k = 0; k < h.size(); ++k)
            hist.add_row({static_cast<long long>(k), static_cast<double>(h[k]) / static_cast<double>(rec->size()),
                          std::string(label)});
    }
    out.write("histogram.csv", hist);

    io::CsvTable succ({"threshold", "success_depleted", "success_undepleted", "false_accept_depleted",
                       "false_accept_undepleted"});
    for (long long t = 0; t <= b.max_threshold; ++t) {
        const auto a = readout::crc_success_rate(dep, t, 0.5 * fwhm);
        const auto u = readout::crc_success_rate(und, t, 0.5 * fwhm);
        succ.add_row({t, a.success, u.success, a.false_accept, u.false_accept});
    }
    out.write("success.csv", succ);

    const auto md = readout::moments(dep), mu = readout::moments(und);
    return {{"threshold", static_cast<double>(thr)},
            {"success_depleted", readout::crc_success_rate(dep, thr, 0.5 * fwhm).success},
            {"success_undepleted", readout::crc_success_rate(und, thr, 0.5 * fwhm).success},
            {"var_over_mean_depleted", md.variance / md.mean},
            {"var_over_mean_undepleted", mu.variance / mu.mean},
            {"linewidth_MHz", fwhm}};
}

inline Summary run_ssr(const Scenario& s, Output& out) {
    const std::uint64_t seed = require_seed(s);
    const auto& b = s.ssr;
    readout::SsrSettings base;
    base.bright_kcps = b.bright_kcps;
    base.dark_kcps = b.dark_kcps;
    base.flip_probability = b.flip_probability;
    base.repetitions = b.repetitions;
    base.window_ms = b.window_ms;
    base.shots = static_cast<std::size_t>(b.shots);
    base.linewidth_MHz = b.linewidth_MHz;
    auto und_s = base;
    und_s.detuning_sigma_MHz = b.undepleted_detuning_sigma_MHz;

    const auto dep = readout::simulate_ssr(base, derive_seed(seed, 1));
    const auto und = readout::simulate_ssr(und_s, derive_seed(seed, 2));

    io::CsvTable hist({"counts", "frequency", "state", "scenario_label"});
    io::CsvTable fid({"scenario_label", "fidelity", "cut", "mean_bright", "mean_dark", "weight_bright", "converged",
                      "overlap_mass"});
    for (const auto& [label, r] : {std::pair{"depleted", &dep}, std::pair{"undepleted", &und}}) {
        for (const auto& [state, counts] : {std::pair{"bright", &r->bright_counts}, std::pair{"dark", &r->dark_counts}}) {
            const auto h = readout::histogram(*counts);
            for (std::size_t k = 0; k < h.size(); ++k)
                hist.add_row({static_cast<long long>(k), static_cast<double>(h[k]) / static_cast<double>(counts->size()),
                              std::string(state), std::string(label)});
        }
        fid.add_row({std::string(label), r->fidelity, r->cut, r->mixture.mean_bright, r->mixture.mean_dark,
                     r->mixture.weight_bright, static_cast<long long>(r->fidelity_valid), r->overlap_mass});
    }
    out.write("histograms.csv", hist);
    out.write("fidelity.csv", fid);
    return {{"fidelity_depleted", dep.fidelity},
            {"fidelity_undepleted", und.fidelity},
            {"mean_bright_depleted", dep.mixture.mean_bright},
            {"mean_bright_undepleted", und.mixture.mean_bright}};
}

inline Summary run_coherence(const Scenario& s, Output& out) {
    const std::uint64_t seed = require_seed(s);
    const auto& b = s.coherence;
    io::CsvTable data({"series", "N", "tau_ms", "signal"});
    io::CsvTable fits({"series", "N", "T2_ms", "T2_stderr_ms", "beta"});
    std::vector<double> Ns, T2s;
    std::uint64_t stream = 0;

    auto series = [&](const std::string& name, double N, double T2, double beta) {
        const auto t = linspace(0.0, b.tau_max_factor * T2, b.points);
        const auto y = readout::coherence_decay(T2, beta, t, b.noise_sigma, derive_seed(seed, stream++));
        for (std::size_t i = 0; i < t.size(); ++i) data.add_row({name, N, t[i], y[i]});
        const auto f = readout::fit_stretched_exponential(t, y);
        fits.add_row({name, N, f.T2_ms, std::sqrt(std::max(0.0, f.covariance(0, 0))), f.beta});
        return f;
    };

    for (double N : b.orders_N) {
        const auto f = series("electron", N, b.electron_T2_ms * std::pow(N, b.scaling_exponent), b.electron_beta);
        Ns.push_back(N);
        T2s.push_back(f.T2_ms);
    }
    const auto nuc = series("nuclear", 0.0, b.nuclear_T2_ms, b.nuclear_beta);
    out.write("coherence.csv", data);
    out.write("fits.csv", fits);

    Summary summary{{"nuclear_T2_ms", nuc.T2_ms}};
    if (Ns.size() >= 3) {
        const auto sc = readout::dd_scaling_fit(Ns, T2s);
        io::CsvTable t({"exponent", "exponent_stderr", "T2_1_ms"});
        t.add_row({sc.exponent, sc.exponent_stderr, sc.T2_1_ms});
        out.write("scaling.csv", t);
        summary.emplace_back("exponent", sc.exponent);
        summary.emplace_back("T2_1_ms", sc.T2_1_ms);
    }
    return summary;
}

/// Runs the scenario's command into `dir`; the summary is also written as summary.csv.
inline PipelineResult run_pipeline(const LoadedScenario& ls, const fs::path& dir) {
    const Scenario& s = ls.scenario;
    Output out(dir);
    Summary summary;
    if (s.command == "solve-junction") summary = run_solve_junction(s, out);
    else if (s.command == "depletion-map") summary = run_depletion_map(s, out);
    else if (s.command == "iv-curve") summary = run_iv_curve(s, out);
    else if (s.command == "ple-sweep") summary = run_ple_sweep(s, out);
    else if (s.command == "trap-sim") summary = run_trap_sim(s, out);
    else if (s.command == "ionization") summary = run_ionization(ls, out);
    else if (s.command == "crc") summary = run_crc(s, out);
    else if (s.command == "ssr") summary = run_ssr(s, out);
    else if (s.command == "coherence") summary = run_coherence(s, out);
    else throw UnknownCommandError("unknown command \"" + s.command + "\"");
    out.write("summary.csv", summary_table(summary));
    return {out.files(), summary};
}

} // namespace v2sim::harness
