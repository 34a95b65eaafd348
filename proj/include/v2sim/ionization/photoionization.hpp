#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "v2sim/core/constants.hpp"
#include "v2sim/core/errors.hpp"
#include "v2sim/fit/least_squares.hpp"

namespace v2sim::ionization {

struct PhononMode {
    double energy_meV;
    double huang_rhys;

    bool operator==(const PhononMode&) const = default;
};

struct VibrationalModeSet {
    std::vector<PhononMode> modes;
    double gaussian_broadening_meV = 5.0;   // standard deviation of the Gaussian damping

    bool operator==(const VibrationalModeSet&) const = default;

    double relaxation_energy_eV() const {
        double e = 0.0;
        for (const auto& m : modes) e += m.huang_rhys * m.energy_meV * 1e-3;
        return e;
    }
    double total_huang_rhys() const {
        double s = 0.0;
        for (const auto& m : modes) s += m.huang_rhys;
        return s;
    }
};

/// Illustrative acoustic/optical mode set with total S ~ 2.6 (overridable by file).
inline VibrationalModeSet default_mode_set() {
    return {{{15.0, 0.6}, {35.0, 0.9}, {60.0, 0.7}, {85.0, 0.4}}, 5.0};
}

inline void validate(const VibrationalModeSet& v) {
    for (std::size_t k = 0; k < v.modes.size(); ++k) {
        const std::string p = "ionization.modes[" + std::to_string(k) + "]";
        if (!(v.modes[k].energy_meV > 0.0)) throw ValidationError(p + ".energy_meV", "must be positive");
        if (!(v.modes[k].huang_rhys >= 0.0)) throw ValidationError(p + ".huang_rhys", "must be >= 0");
    }
    if (!(v.gaussian_broadening_meV > 0.0))
        throw ValidationError("ionization.gaussian_broadening_meV", "must be positive");
}

struct EnergyGrid {
    double start_eV = -0.1;
    double stop_eV = 0.6;
    int points = 1401;

    double step() const { return (stop_eV - start_eV) / (points - 1); }
    std::vector<double> values() const {
        std::vector<double> v(static_cast<std::size_t>(points));
        for (int i = 0; i < points; ++i) v[static_cast<std::size_t>(i)] = start_eV + i * step();
        return v;
    }
};

struct SpectralFunction {
    std::vector<double> energy_eV;
    std::vector<double> value;   // 1/eV
    double raw_norm = 1.0;       // quadrature integral before renormalization

    double integral() const {
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < value.size(); ++i)
            s += 0.5 * (value[i] + value[i + 1]) * (energy_eV[i + 1] - energy_eV[i]);
        return s;
    }
    double first_moment() const {
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < value.size(); ++i)
            s += 0.5 * (value[i] * energy_eV[i] + value[i + 1] * energy_eV[i + 1]) * (energy_eV[i + 1] - energy_eV[i]);
        return s;
    }
};

struct TimeGrid {
    int points = 1 << 14;
    double span_sigmas = 10.0;   // t_max = span / sigma_t
};

/// Default grid covering the relaxation energy plus 5 Gaussian widths on both sides.
inline EnergyGrid default_energy_grid(const VibrationalModeSet& v, double step_eV = 2e-4) {
    const double sig = v.gaussian_broadening_meV * 1e-3;
    double emax = 0.0;
    for (const auto& m : v.modes) emax = std::max(emax, m.energy_meV * 1e-3);
    const double S = v.total_huang_rhys();
    const double hi = v.relaxation_energy_eV() + 6.0 * std::sqrt(S + 1.0) * emax + 8.0 * sig;
    const double lo = -8.0 * sig;
    EnergyGrid g;
    g.start_eV = lo;
    g.stop_eV = hi;
    g.points = static_cast<int>(std::ceil((hi - lo) / step_eV)) + 1;
    return g;
}

/// Generating-function line shape: S(t) = sum S_k exp(-i w_k t), G(t) = exp(S(t) - S(0)),
/// A(e) = (1/2 pi hbar) int G(t) exp(-sigma^2 t^2 / 2) exp(i e t / hbar) dt, evaluated by
/// direct quadrature over the damped time window (energies measured in eV, t in hbar/eV).
/// Phonon emission shifts weight to positive e (absorption side, e = photon - ZPL).
inline SpectralFunction spectral_function(const VibrationalModeSet& v, const EnergyGrid& grid,
                                          const TimeGrid& tg = {}) {
    validate(v);
    if (grid.points < 16 || !(grid.stop_eV > grid.start_eV)) throw DomainError("spectral_function: bad energy grid");
    const double sig = v.gaussian_broadening_meV * 1e-3;
    const double tmax = tg.span_sigmas / sig;
    const int nt = tg.points;
    const double dt = tmax / (nt - 1);
    const double S0 = v.total_huang_rhys();

    // Damped G(t) on t >= 0; A is real because G(-t) = conj G(t).
    std::vector<std::complex<double>> Gt(static_cast<std::size_t>(nt));
    for (int k = 0; k < nt; ++k) {
        const double t = k * dt;
        std::complex<double> s(0.0, 0.0);
        for (const auto& m : v.modes) s += m.huang_rhys * std::polar(1.0, -m.energy_meV * 1e-3 * t);
        Gt[static_cast<std::size_t>(k)] = std::exp(s - S0) * std::exp(-0.5 * sig * sig * t * t);
    }

    SpectralFunction A;
    A.energy_eV = grid.values();
    A.value.resize(A.energy_eV.size());
    for (std::size_t i = 0; i < A.energy_eV.size(); ++i) {
        const double e = A.energy_eV[i];
        // Trapezoid on [0, tmax] of Re[G(t) exp(i e t)], doubled for the symmetric half.
        const std::complex<double> step = std::polar(1.0, e * dt);
        std::complex<double> ph(1.0, 0.0);
        double acc = 0.0;
        for (int k = 0; k < nt; ++k) {
            const double w = (k == 0 || k == nt - 1) ? 0.5 : 1.0;
            acc += w * (Gt[static_cast<std::size_t>(k)] * ph).real();
            ph *= step;
            if ((k & 255) == 255) ph /= std::abs(ph);
        }
        A.value[i] = std::max(0.0, acc * dt / kPi);
    }

    const double norm = A.integral();
    if (std::abs(norm - 1.0) > 0.01)
        throw DomainError("spectral_function: energy grid too narrow, norm deficit " + std::to_string(1.0 - norm));
    for (auto& a : A.value) a /= norm;
    A.raw_norm = norm;
    return A;
}

/// Photon energy (eV) -> sigma_el (cm^2), linear interpolation, zero outside the table.
struct ElectronicCrossSection {
    std::vector<double> energy_eV;
    std::vector<double> sigma_cm2;
    double threshold_eV = 1.31;

    double operator()(double e) const {
        if (energy_eV.empty() || e < threshold_eV || e < energy_eV.front() || e > energy_eV.back()) return 0.0;
        auto it = std::upper_bound(energy_eV.begin(), energy_eV.end(), e);
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - energy_eV.begin()), energy_eV.size() - 1);
        if (k == 0) return sigma_cm2.front();
        const double t = (e - energy_eV[k - 1]) / (energy_eV[k] - energy_eV[k - 1]);
        return (1 - t) * sigma_cm2[k - 1] + t * sigma_cm2[k];
    }
};

inline void validate(const ElectronicCrossSection& s) {
    if (s.energy_eV.size() != s.sigma_cm2.size() || s.energy_eV.size() < 2)
        throw ValidationError("ionization.sigma_el", "need >= 2 paired rows");
    for (std::size_t i = 0; i + 1 < s.energy_eV.size(); ++i)
        if (!(s.energy_eV[i + 1] > s.energy_eV[i]))
            throw ValidationError("ionization.sigma_el", "energies must be strictly increasing");
    for (std::size_t i = 0; i < s.energy_eV.size(); ++i) {
        if (!(s.sigma_cm2[i] >= 0.0)) throw ValidationError("ionization.sigma_el", "cross section must be >= 0");
        if (s.energy_eV[i] < s.threshold_eV && s.sigma_cm2[i] != 0.0)
            throw ValidationError("ionization.sigma_el", "cross section must vanish below threshold");
        if (!(s.energy_eV[i] > 0.0)) throw ValidationError("ionization.sigma_el", "energies must be positive");
    }
}

/// Heuristic near-edge form sigma = scale * sqrt(e - threshold) above threshold.
inline ElectronicCrossSection sqrt_onset_cross_section(double threshold_eV = 1.31, double scale_cm2 = 1e-17,
                                                       double e_max_eV = 2.2, int points = 901) {
    ElectronicCrossSection s;
    s.threshold_eV = threshold_eV;
    const double e0 = threshold_eV - 0.3;
    for (int i = 0; i < points; ++i) {
        const double e = e0 + (e_max_eV - e0) * i / (points - 1);
        s.energy_eV.push_back(e);
        s.sigma_cm2.push_back(e > threshold_eV ? scale_cm2 * std::sqrt(e - threshold_eV) : 0.0);
    }
    return s;
}

struct PhotoionizationCrossSection {
    std::vector<double> energy_eV;
    std::vector<double> sigma_cm2;

    double operator()(double e) const {
        if (energy_eV.empty() || e < energy_eV.front() || e > energy_eV.back()) return 0.0;
        auto it = std::upper_bound(energy_eV.begin(), energy_eV.end(), e);
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - energy_eV.begin()), energy_eV.size() - 1);
        if (k == 0) return sigma_cm2.front();
        const double t = (e - energy_eV[k - 1]) / (energy_eV[k] - energy_eV[k - 1]);
        return (1 - t) * sigma_cm2[k - 1] + t * sigma_cm2[k];
    }
};

/// sigma_PI(e) = e * int sigma_el(e') / e' * A(e - e') de', trapezoid over the spectral-function
/// grid (e' = e - x for each spectral sample x). Output on the sigma_el energy grid.
inline PhotoionizationCrossSection convolve_cross_section(const ElectronicCrossSection& sel, const SpectralFunction& A,
                                                          std::optional<std::vector<double>> out_grid = std::nullopt) {
    validate(sel);
    if (A.energy_eV.size() < 2) throw DomainError("convolve_cross_section: empty spectral function");
    PhotoionizationCrossSection out;
    out.energy_eV = out_grid ? *out_grid : sel.energy_eV;
    out.sigma_cm2.resize(out.energy_eV.size());
    // Spectral support must fit inside the table so no weight is lost at the upper end.
    double a_lo = A.energy_eV.front(), a_hi = A.energy_eV.back();
    for (std::size_t i = 0; i < A.value.size(); ++i)
        if (A.value[i] > 1e-12) {
            a_lo = A.energy_eV[i];
            break;
        }
    for (std::size_t i = A.value.size(); i-- > 0;)
        if (A.value[i] > 1e-12) {
            a_hi = A.energy_eV[i];
            break;
        }
    if (sel.energy_eV.front() <= 0.0) throw DomainError("convolve_cross_section: sigma_el support must be at e' > 0");
    if (a_hi - a_lo > sel.energy_eV.back() - sel.energy_eV.front())
        throw DomainError("convolve_cross_section: spectral function support wider than the sigma_el table");

    for (std::size_t i = 0; i < out.energy_eV.size(); ++i) {
        const double e = out.energy_eV[i];
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < A.energy_eV.size(); ++k) {
            auto f = [&](std::size_t j) {
                const double ep = e - A.energy_eV[j];
                return ep > 0.0 ? sel(ep) / ep * A.value[j] : 0.0;
            };
            acc += 0.5 * (f(k) + f(k + 1)) * (A.energy_eV[k + 1] - A.energy_eV[k]);
        }
        out.sigma_cm2[i] = std::max(0.0, e * acc);
    }
    return out;
}

/// Diffraction-limited spot area pi (0.9 lambda / NA)^2 in um^2.
inline double spot_area_um2(double wavelength_nm, double numerical_aperture = 0.75) {
    if (!(wavelength_nm > 0.0 && numerical_aperture > 0.0)) throw DomainError("spot_area: bad wavelength or NA");
    const double r = 0.9 * wavelength_nm * 1e-3 / numerical_aperture;
    return kPi * r * r;
}

/// Ionization rate per optical power (Hz/uW): sigma_PI(hc/lambda) * lambda / (h c A_spot).
inline double rate_per_power(const PhotoionizationCrossSection& s, double wavelength_nm,
                             double numerical_aperture = 0.75) {
    const double e = photon_energy_eV(wavelength_nm);
    if (!s.energy_eV.empty() && (e < s.energy_eV.front() || e > s.energy_eV.back()))
        throw DomainError("rate_per_power: wavelength outside the cross-section support");
    const double sigma_m2 = s(e) * 1e-4;
    const double area_m2 = spot_area_um2(wavelength_nm, numerical_aperture) * 1e-12;
    const double photons_per_joule = wavelength_nm * 1e-9 / (si::h * si::c);
    return sigma_m2 * photons_per_joule / area_m2 * 1e-6;
}

struct IonizationRateCurve {
    std::vector<double> wavelength_nm;
    std::vector<double> gamma_per_uW;
    double gamma_max_per_uW = 0.0;

    std::vector<double> normalized() const {
        std::vector<double> n(gamma_per_uW.size(), 0.0);
        if (gamma_max_per_uW > 0.0)
            for (std::size_t i = 0; i < n.size(); ++i) n[i] = gamma_per_uW[i] / gamma_max_per_uW;
        return n;
    }
};

inline IonizationRateCurve rate_curve(const PhotoionizationCrossSection& s, const std::vector<double>& wavelengths_nm,
                                      double numerical_aperture = 0.75) {
    IonizationRateCurve c;
    c.wavelength_nm = wavelengths_nm;
    for (double l : wavelengths_nm) c.gamma_per_uW.push_back(rate_per_power(s, l, numerical_aperture));
    c.gamma_max_per_uW = c.gamma_per_uW.empty() ? 0.0 : *std::max_element(c.gamma_per_uW.begin(), c.gamma_per_uW.end());
    return c;
}

struct FermiFit {
    double threshold_nm = 0.0;
    double width_nm = 0.0;
    double amplitude = 0.0;
    double baseline = 0.0;
    Eigen::MatrixXd covariance;
    bool width_diverged = false;
};

inline double fermi_step(double lambda, double th, double w, double amp, double base) {
    return base + amp / (1.0 + std::exp((lambda - th) / w));
}

/// Least-squares fit of baseline + amplitude / (1 + exp((lambda - lambda_th) / w)).
/// Flat data throws NumericalError; a width that runs away is flagged.
inline FermiFit fit_fermi_threshold(const std::vector<double>& lambda_nm, const std::vector<double>& rate) {
    if (lambda_nm.size() != rate.size() || lambda_nm.size() < 6)
        throw DomainError("fit_fermi_threshold: need >= 6 paired points");
    const auto [mn, mx] = std::minmax_element(rate.begin(), rate.end());
    const double span_l = *std::max_element(lambda_nm.begin(), lambda_nm.end()) -
                          *std::min_element(lambda_nm.begin(), lambda_nm.end());
    if (!(*mx - *mn > 1e-12 * std::max(1.0, std::abs(*mx))))
        throw NumericalError("fit_fermi_threshold: flat data, no threshold to fit", 0.0);

    // Initial threshold at the half-way crossing.
    const double half = 0.5 * (*mx + *mn);
    double th0 = lambda_nm[lambda_nm.size() / 2];
    for (std::size_t i = 0; i + 1 < lambda_nm.size(); ++i)
        if ((rate[i] - half) * (rate[i + 1] - half) <= 0.0) {
            th0 = 0.5 * (lambda_nm[i] + lambda_nm[i + 1]);
            break;
        }
    auto model = [](const Eigen::VectorXd& p, double l) { return fermi_step(l, p[0], p[1], p[2], p[3]); };
    Eigen::VectorXd p0(4);
    p0 << th0, span_l / 20.0, *mx - *mn, *mn;
    const auto f = fit::least_squares(model, lambda_nm, rate, p0);
    FermiFit out;
    out.threshold_nm = f.params[0];
    out.width_nm = std::abs(f.params[1]);
    out.amplitude = f.params[2];
    out.baseline = f.params[3];
    out.covariance = f.covariance;
    out.width_diverged = out.width_nm > span_l || f.singular;
    if (!std::isfinite(out.threshold_nm))
        throw NumericalError("fit_fermi_threshold: non-finite threshold, rss " + std::to_string(f.rss), f.rss);
    return out;
}

struct TwoPhotonModel {
    double resonant_rate_per_nW = 0.05;   // Gamma_res, Hz/nW
    double saturation_power_nW = 10.0;
    IonizationRateCurve curve;            // Gamma_PI(lambda) table for the second laser
};

inline double interpolate_rate(const IonizationRateCurve& c, double lambda_nm) {
    if (c.wavelength_nm.empty()) return 0.0;
    if (lambda_nm <= c.wavelength_nm.front()) return c.gamma_per_uW.front();
    if (lambda_nm >= c.wavelength_nm.back()) return c.gamma_per_uW.back();
    auto it = std::upper_bound(c.wavelength_nm.begin(), c.wavelength_nm.end(), lambda_nm);
    const std::size_t k = static_cast<std::size_t>(it - c.wavelength_nm.begin());
    const double t = (lambda_nm - c.wavelength_nm[k - 1]) / (c.wavelength_nm[k] - c.wavelength_nm[k - 1]);
    return (1 - t) * c.gamma_per_uW[k - 1] + t * c.gamma_per_uW[k];
}

/// Excited-state occupation (two-level saturation, at most one half).
inline double excited_occupation(double resonant_power_nW, double saturation_power_nW) {
    const double x = resonant_power_nW / saturation_power_nW;
    return 0.5 * x / (1.0 + x);
}

/// gamma = Gamma_res P_res + s(P_res) Gamma_PI(lambda_2) P_2, in Hz.
inline double two_photon_rate(double resonant_power_nW, double second_power_uW, double second_wavelength_nm,
                              const TwoPhotonModel& m) {
    if (resonant_power_nW < 0.0 || second_power_uW < 0.0) throw DomainError("two_photon_rate: powers must be >= 0");
    return m.resonant_rate_per_nW * resonant_power_nW +
           excited_occupation(resonant_power_nW, m.saturation_power_nW) *
               interpolate_rate(m.curve, second_wavelength_nm) * second_power_uW;
}

} // namespace v2sim::ionization
