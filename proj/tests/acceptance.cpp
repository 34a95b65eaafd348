// Acceptance checks 1-13. One PASS/FAIL line per criterion; exit status 1 if any fail.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "v2sim/harness/run.hpp"
#include "v2sim/io/csv.hpp"
#include "v2sim/ionization/photoionization.hpp"
#include "v2sim/junction/depletion.hpp"
#include "v2sim/junction/diode.hpp"
#include "v2sim/optics/stark.hpp"
#include "v2sim/readout/readout.hpp"
#include "v2sim/trap/markov.hpp"

using namespace v2sim;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const fs::path kScenarios = fs::path(V2SIM_SOURCE_DIR) / "scenarios";
const fs::path kOut = fs::temp_directory_path() / "v2sim-acceptance";

std::map<std::string, double> summary_of(const fs::path& dir) {
    std::map<std::string, double> m;
    const auto t = io::read_text_csv(dir / "summary.csv");
    for (const auto& r : t.rows) m[r[0]] = std::stod(r[1]);
    return m;
}

std::vector<fs::path> bundled() {
    std::vector<fs::path> v;
    for (const auto& e : fs::directory_iterator(kScenarios))
        if (e.path().extension() == ".toml") v.push_back(e.path());
    std::sort(v.begin(), v.end());
    return v;
}

fs::path run_dir(const std::string& pass, const fs::path& cfg) { return kOut / pass / cfg.stem(); }

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

Verdict c1_depletion_width() {
    MaterialStack s;
    s.epi_thickness_um = 80.0;
    const double T = 300.0, kT = kBoltzmannEv * T;
    const auto mesh = junction::make_column_mesh(s, 801);
    const double Nc = conduction_dos_m3(s, Kelvin{T}) * 1e-6;
    const double vbi = s.schottky_barrier().value - kT * std::log(Nc / s.doping_epi_cm3);
    std::string d;
    bool ok = true;
    for (double VR : {0.0, 10.0, 50.0, 150.0}) {
        const auto sol = junction::solve_poisson(s, mesh, Volts{-VR}, Kelvin{T});
        double W = 0.0;
        for (std::size_t j = 0; j < mesh.nz() && mesh.z_um[j] <= 0.75 * s.epi_thickness_um; ++j)
            W += (1.0 - sol.n_cm3[j] / s.doping_epi_cm3) * mesh.dual_dz(j);
        const double Wa = std::sqrt(2.0 * s.static_relative_permittivity * si::eps0 * (vbi + VR) /
                                    (si::q * s.doping_epi_cm3 * 1e6)) * 1e6;
        const double rel = std::abs(W - Wa) / Wa;
        ok = ok && rel < 0.02;
        d += fmt("V_R=%g W=%.3f analytic=%.3f (%.2f%%) ", VR, W, Wa, 100 * rel);
    }
    return {ok, d};
}

Verdict c2_depletion_voltage() {
    const auto s = summary_of(run_dir("a", kScenarios / "fig2b_depletion.toml"));
    const double ud = s.at("ud_site_V_T15");
    return {ud >= -25.0 && ud <= -4.0, fmt("U_d(11.2 um, 2 um, 15 K) = %.2f V, window [-25, -4] V", ud)};
}

Verdict c3_monotonicity() {
    const auto t = io::read_numeric_csv(run_dir("a", kScenarios / "figS2e.toml") / "area.csv");
    const auto& T = t.column("temperature_K");
    const auto& V = t.column("bias_V");
    const auto& A = t.column("area_um2");
    bool ok = true;
    int pairs = 0;
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < A.size(); ++j) {
            if (i == j) continue;
            const bool more_bias = T[i] == T[j] && std::abs(V[j]) > std::abs(V[i]);
            const bool colder = V[i] == V[j] && T[j] < T[i];
            if (more_bias || colder) {
                ++pairs;
                ok = ok && A[j] >= A[i];
            }
        }
    return {ok && pairs == 18, fmt("%d ordered pairs over %zu grid points, area non-decreasing: %s", pairs, A.size(),
                                   ok ? "yes" : "no")};
}

Verdict c4_fourier() {
    const double a = optics::fourier_limit(6.09), b = optics::fourier_limit(11.35);
    return {std::abs(a - 26.1) <= 0.1 && std::abs(b - 14.0) <= 0.1, fmt("6.09 ns -> %.3f MHz, 11.35 ns -> %.3f MHz", a, b)};
}

Verdict c5_stark() {
    const auto t = io::read_text_csv(run_dir("a", kScenarios / "fig2a.toml") / "sweep_summary.csv");
    const auto ib = t.index_of("solver.bias_V"), ic = t.index_of("center_GHz"), ip = t.index_of("E_par_MVm"),
               iq = t.index_of("E_perp_MVm"), ir = t.index_of("reliable");
    std::vector<double> par, perp, c;
    for (const auto& r : t.rows)
        if (std::stod(r[ib]) <= 0.0 && std::stod(r[ir]) == 1.0) {
            par.push_back(std::stod(r[ip]));
            perp.push_back(std::stod(r[iq]));
            c.push_back(std::stod(r[ic]));
        }
    const optics::DefectOpticalModel m;
    const auto f = optics::fit_stark_coefficients(par, perp, c);
    const double rel = std::abs(f.quadratic - m.stark_perp_quadratic) / m.stark_perp_quadratic;
    bool exact = true;
    for (double E : {0.37, 1.0, 2.53, 7.1}) exact = exact && optics::stark_detuning(0, 2 * E, m) / optics::stark_detuning(0, E, m) == 4.0;
    return {rel < 0.05 && exact, fmt("fitted %.5f GHz/(MV/m)^2 from %zu points (%.2f%% off 0.047), linear %.3f; "
                                     "delta(2E)/delta(E)==4: %s",
                                     f.quadratic, c.size(), 100 * rel, f.linear, exact ? "yes" : "no")};
}

Verdict c6_spectral() {
    const double w = 0.05;
    const ionization::VibrationalModeSet one{{{w * 1e3, 1.0}}, 2.0};
    const auto A = ionization::spectral_function(one, ionization::EnergyGrid{-0.025, 0.5, 5251});
    double worst = 0.0, fact = 1.0;
    for (int n = 0; n <= 5; ++n) {
        if (n) fact *= n;
        double mass = 0.0;
        for (std::size_t i = 0; i + 1 < A.value.size(); ++i)
            if (A.energy_eV[i] >= (n - 0.5) * w - 1e-12 && A.energy_eV[i + 1] <= (n + 0.5) * w + 1e-12)
                mass += 0.5 * (A.value[i] + A.value[i + 1]) * (A.energy_eV[i + 1] - A.energy_eV[i]);
        worst = std::max(worst, std::abs(mass / (std::exp(-1.0) / fact) - 1.0));
    }
    const auto v = ionization::default_mode_set();
    const auto B = ionization::spectral_function(v, ionization::default_energy_grid(v));
    const double norm_err = std::max(std::abs(A.raw_norm - 1.0), std::abs(B.raw_norm - 1.0));
    const double moment_err = std::abs(B.first_moment() / v.relaxation_energy_eV() - 1.0);
    return {worst < 0.01 && norm_err < 1e-3 && moment_err < 0.01,
            fmt("replica weights worst %.3f%%, quadrature norm off by %.2e, first moment off by %.3f%%", 100 * worst,
                norm_err, 100 * moment_err)};
}

Verdict c7_convolution() {
    const auto sel = ionization::sqrt_onset_cross_section();
    const auto narrow = ionization::spectral_function({{}, 0.2}, ionization::EnergyGrid{-0.002, 0.002, 401});
    const auto id = ionization::convolve_cross_section(sel, narrow);
    double worst_id = 0.0;
    for (double e = 1.33; e <= 2.15; e += 0.02) worst_id = std::max(worst_id, std::abs(id(e) / sel(e) - 1.0));

    const auto v = ionization::default_mode_set();
    const auto A = ionization::spectral_function(v, ionization::default_energy_grid(v));
    double worst = 0.0;
    const double h = A.energy_eV[1] - A.energy_eV[0];
    for (double e = 1.30; e <= 2.0; e += 0.05) {
        const auto pi = ionization::convolve_cross_section(sel, A, std::vector<double>{e});
        double acc = 0.0;
        for (std::size_t j = 0; j < A.value.size(); ++j) {
            const double ep = e - A.energy_eV[j];
            if (ep > 0.0) acc += sel(ep) / ep * A.value[j] * h;
        }
        worst = std::max(worst, std::abs(pi(e) / (e * acc) - 1.0));
    }
    return {worst_id < 0.01 && worst < 0.01,
            fmt("delta-like A worst %.3f%%, Riemann-sum oracle worst %.3f%%", 100 * worst_id, 100 * worst)};
}

Verdict c8_fermi() {
    std::vector<double> l, th;
    for (int i = 0; i < 65; ++i) l.push_back(880.0 + 5.0 * i);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, 0.05);
        std::vector<double> y;
        for (double x : l) y.push_back(ionization::fermi_step(x, 948.0, 10.0, 1.0, 0.0) + g(rng));
        th.push_back(ionization::fit_fermi_threshold(l, y).threshold_nm);
    }
    const double m = median(th);
    return {std::abs(m - 948.0) <= 2.0, fmt("median threshold %.2f nm over 100 seeds at 5%% noise", m)};
}

Verdict c9_ctmc() {
    const auto model = trap::default_trap_model();
    const auto& q = model.generator(trap::Condition::Dark);
    const auto pi = trap::stationary_distribution(q).distribution;
    // About 320 jumps per second in the dark: 1e5 dwell events needs ~313 s.
    const double T = 330000.0;
    const auto tr = trap::simulate_trajectory(model, {{trap::Condition::Dark, T}}, T, 909, 1);
    const auto occ = trap::occupancy(tr, model.n_states);
    const double events = static_cast<double>(tr.states.size());
    bool ok = events >= 1e5;
    double worst = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) {
        const double sigma = std::sqrt(std::max(pi[k] * (1 - pi[k]), 1e-300) / events);
        const double z = pi[k] > 0 ? std::abs(occ[k] - pi[k]) / sigma : (occ[k] == 0.0 ? 0.0 : 1e9);
        worst = std::max(worst, z);
    }
    ok = ok && worst <= 3.0;

    trap::TransientProtocol p;
    p.initial = trap::Condition::Resonant;
    p.pump = trap::Condition::Dark;
    p.probe_state = 1;
    p.ensemble = 4000;
    for (int k = 0; k <= 40; ++k) p.durations_ms.push_back(0.25 * k);
    const auto r = trap::transient_recovery(model, p, 4242);
    const auto p0 = trap::stationary_distribution(model.generator(p.initial)).distribution;
    const double lam = trap::dominant_relaxation_rate_per_ms(q, p0, p.probe_state);
    const double rel = std::abs(r.fitted_rate_per_ms - lam) / lam;
    return {ok && r.fit_ok && rel < 0.05,
            fmt("%.0f dwell events, worst |z| = %.2f; transient %.4f/ms vs eigenvalue %.4f/ms (%.2f%%)", events, worst,
                r.fitted_rate_per_ms, lam, 100 * rel)};
}

Verdict c10_crc() {
    const auto dir = run_dir("a", kScenarios / "fig4e.toml");
    const auto s = summary_of(dir);
    const double vd = s.at("var_over_mean_depleted"), vu = s.at("var_over_mean_undepleted");
    const double sd = s.at("success_depleted"), su = s.at("success_undepleted");
    const auto t = io::read_numeric_csv(dir / "success.csv");
    bool mono = true;
    for (const char* col : {"success_depleted", "success_undepleted"}) {
        const auto& c = t.column(col);
        for (std::size_t i = 1; i < c.size(); ++i) mono = mono && c[i] <= c[i - 1];
    }
    const bool ok = vd >= 0.95 && vd <= 1.05 && vu > 1.5 && mono && std::abs(sd - 0.60) <= 0.10 && std::abs(su - 0.35) <= 0.10;
    return {ok, fmt("var/mean frozen %.4f, diffusing %.3f; monotone: %s; success at threshold %.0f: depleted %.3f, "
                    "undepleted %.3f",
                    vd, vu, mono ? "yes" : "no", s.at("threshold"), sd, su)};
}

Verdict c11_fits() {
    std::vector<double> t;
    for (int i = 1; i <= 30; ++i) t.push_back(3.0 * 0.4 * i / 30.0);
    std::vector<double> T2s, exps;
    const std::vector<double> N{1, 2, 4, 8, 16, 32};
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        T2s.push_back(readout::fit_stretched_exponential(t, readout::coherence_decay(0.4, 1.5, t, 0.03, seed)).T2_ms);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, 0.05);
        std::vector<double> T2;
        for (double n : N) T2.push_back(0.4 * std::pow(n, 2.0 / 3.0) * (1.0 + g(rng)));
        exps.push_back(readout::dd_scaling_fit(N, T2).exponent);
    }
    const double mT = median(T2s), mp = median(exps);
    const double worst_p = std::max(std::abs(*std::max_element(exps.begin(), exps.end()) - 2.0 / 3.0),
                                    std::abs(*std::min_element(exps.begin(), exps.end()) - 2.0 / 3.0));
    return {std::abs(mT / 0.4 - 1.0) < 0.05 && std::abs(mp - 2.0 / 3.0) <= 0.05,
            fmt("median T2 %.4f ms (injected 0.4), median exponent %.4f (worst seed off by %.3f)", mT, mp, worst_p)};
}

Verdict c12_iv() {
    const auto ls = harness::load_scenario(kScenarios / "fig1d.toml");
    const double n = ls.scenario.iv.ideality;
    std::string d;
    bool ok = true;
    double prev = -1e300;
    for (double T : {300.0, 200.0, 100.0, 50.0, 15.0}) {
        const double v = junction::forward_voltage_for_current(ls.scenario.material, Kelvin{T}, n, 10e-3).value;
        ok = ok && v > prev;
        prev = v;
        d += fmt("%gK:%.3fV ", T, v);
    }
    return {ok, "V_F at 10 mA " + d};
}

Verdict c13_determinism() {
    std::size_t files = 0;
    std::vector<std::string> diffs;
    for (const auto& cfg : bundled()) {
        const auto a = run_dir("a", cfg), b = run_dir("b", cfg);
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (e.path().extension() != ".csv") continue;
            ++files;
            const auto other = b / fs::relative(e.path(), a);
            if (!fs::exists(other) || slurp(e.path()) != slurp(other)) diffs.push_back(fs::relative(e.path(), kOut).string());
        }
    }
    return {diffs.empty() && files > 0,
            fmt("%zu scenarios, %zu CSV files compared, %zu differ%s", bundled().size(), files, diffs.size(),
                diffs.empty() ? "" : (" e.g. " + diffs.front()).c_str())};
}

} // namespace

int main() {
    fs::remove_all(kOut);
    bool runs_ok = true;
    for (const char* pass : {"a", "b"})
        for (const auto& cfg : bundled()) {
            const auto r = harness::run_scenario(cfg, harness::RunOptions{run_dir(pass, cfg), std::nullopt, 1});
            std::printf("ran %s [%s] in %.1f s: %s\n", cfg.filename().c_str(), pass, r.manifest.wall_clock_s,
                        r.error.code == 0 ? "ok" : r.error.message.c_str());
            std::fflush(stdout);
            runs_ok = runs_ok && r.error.code == 0;
        }

    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"depletion-width oracle", c1_depletion_width},
        {"depletion voltage of defect-1", c2_depletion_voltage},
        {"depletion-zone monotonicity grid", c3_monotonicity},
        {"Fourier limits", c4_fourier},
        {"closed-loop Stark sweep", c5_stark},
        {"spectral function oracle", c6_spectral},
        {"cross-section convolution identity", c7_convolution},
        {"Fermi-threshold fit", c8_fermi},
        {"CTMC occupancy and transient", c9_ctmc},
        {"CRC statistics", c10_crc},
        {"coherence fit recovery", c11_fits},
        {"I-V forward voltage ordering", c12_iv},
        {"determinism", c13_determinism},
    };
    int failed = runs_ok ? 0 : 1;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, v.detail.c_str());
        std::fflush(stdout);
        failed += v.pass ? 0 : 1;
    }
    std::printf("%s: %d of %zu criteria failed\n", failed ? "FAILED" : "ALL PASSED", failed, criteria.size());
    return failed ? 1 : 0;
}
