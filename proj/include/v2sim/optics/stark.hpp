#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "v2sim/core/constants.hpp"
#include "v2sim/core/errors.hpp"
#include "v2sim/optics/lineshape.hpp"

namespace v2sim::optics {

/// Carrier-density -> inhomogeneous (Gaussian) broadening law, anchored on total Voigt widths.
struct BroadeningLaw {
    double low_density_cm3 = 1e12;
    double high_density_cm3 = 7e13;
    double total_fwhm_low_MHz = 40.0;
    double total_fwhm_high_MHz = 170.0;
    double steepness_per_decade = 4.0;

    bool operator==(const BroadeningLaw&) const = default;
};

struct DefectOpticalModel {
    double zpl_energy_eV = 1.352;
    double excited_state_splitting_GHz = 1.0;
    double lifetime_A1_ns = 6.09;
    double lifetime_A2_ns = 11.35;
    double weight_A1 = 0.5;
    double weight_A2 = 0.5;
    double stark_perp_quadratic = 0.047;   // GHz / (MV/m)^2
    double stark_par_linear = 3.7;         // GHz / (MV/m)
    double saturation_power_nW = 10.0;
    BroadeningLaw broadening{};

    bool operator==(const DefectOpticalModel&) const = default;
};

inline void validate(const DefectOpticalModel& m) {
    if (!(m.lifetime_A1_ns > 0.0)) throw ValidationError("optics.lifetime_A1_ns", "must be positive");
    if (!(m.lifetime_A2_ns > 0.0)) throw ValidationError("optics.lifetime_A2_ns", "must be positive");
    if (!(m.weight_A1 >= 0.0)) throw ValidationError("optics.weight_A1", "must be >= 0");
    if (!(m.weight_A2 >= 0.0)) throw ValidationError("optics.weight_A2", "must be >= 0");
    if (m.weight_A1 + m.weight_A2 <= 0.0) throw ValidationError("optics.weight_A1", "weights must not both be zero");
    if (!std::isfinite(m.stark_perp_quadratic))
        throw ValidationError("optics.stark_perp_quadratic", "must be finite");
    if (!std::isfinite(m.stark_par_linear)) throw ValidationError("optics.stark_par_linear", "must be finite");
    if (!(m.saturation_power_nW > 0.0)) throw ValidationError("optics.saturation_power_nW", "must be positive");
    const auto& b = m.broadening;
    if (!(b.low_density_cm3 > 0.0 && b.high_density_cm3 > b.low_density_cm3))
        throw ValidationError("optics.broadening.high_density_cm3", "anchors must satisfy 0 < low < high");
    if (!(b.total_fwhm_high_MHz >= b.total_fwhm_low_MHz && b.total_fwhm_low_MHz > 0.0))
        throw ValidationError("optics.broadening.total_fwhm_high_MHz", "anchor widths must satisfy 0 < low <= high");
    if (!(b.steepness_per_decade > 0.0))
        throw ValidationError("optics.broadening.steepness_per_decade", "must be positive");
}

/// Stark detuning in GHz: quadratic in the in-plane field, linear along c.
inline double stark_detuning(double E_par_MVm, double E_perp_MVm, const DefectOpticalModel& m) {
    return m.stark_perp_quadratic * E_perp_MVm * E_perp_MVm + m.stark_par_linear * E_par_MVm;
}

/// Lifetime-limited linewidth 1 / (2 pi tau) in MHz.
inline double fourier_limit(double lifetime_ns) {
    if (!(lifetime_ns > 0.0)) throw DomainError("fourier_limit: lifetime must be positive");
    if (std::isinf(lifetime_ns)) return 0.0;
    return 1e3 / (2.0 * kPi * lifetime_ns);
}

inline double power_broadening_factor(const DefectOpticalModel& m, double power_nW) {
    if (!(power_nW >= 0.0)) throw DomainError("power must be >= 0");
    return std::sqrt(1.0 + power_nW / m.saturation_power_nW);
}

/// Homogeneous A1/A2 widths (MHz) at the given power.
struct HomogeneousWidths {
    double a1, a2;
};

inline HomogeneousWidths homogeneous_widths(const DefectOpticalModel& m, double power_nW) {
    const double f = power_broadening_factor(m, power_nW);
    return {fourier_limit(m.lifetime_A1_ns) * f, fourier_limit(m.lifetime_A2_ns) * f};
}

/// Composite two-transition line (area-normalized Lorentzians, weighted), optionally
/// convolved with a Gaussian of width `gaussian_fwhm`. Returns the profile value at `x` (MHz).
inline double composite_profile(const DefectOpticalModel& m, double power_nW, double gaussian_fwhm, double x) {
    const auto w = homogeneous_widths(m, power_nW);
    const double s = m.weight_A1 + m.weight_A2;
    double v = 0.0;
    if (m.weight_A1 > 0.0) v += m.weight_A1 / s * voigt(x, w.a1, gaussian_fwhm);
    if (m.weight_A2 > 0.0) v += m.weight_A2 / s * voigt(x, w.a2, gaussian_fwhm);
    return v;
}

/// FWHM (MHz) of the weighted A1 + A2 Lorentzian composite.
inline double effective_two_laser_linewidth(const DefectOpticalModel& m, double power_nW) {
    validate(m);
    const auto w = homogeneous_widths(m, power_nW);
    return numeric_fwhm([&](double x) { return composite_profile(m, power_nW, 0.0, x); }, std::max(w.a1, w.a2));
}

namespace detail {
inline double sigmoid(double y) { return y >= 0.0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y)); }
} // namespace detail

/// Gaussian (excess) FWHM at the two anchors for a given Lorentzian composite width.
struct ExcessAnchors {
    double low_MHz, high_MHz;
};

inline ExcessAnchors excess_anchors(const DefectOpticalModel& m, double lorentz_fwhm_MHz) {
    const auto& b = m.broadening;
    return {gaussian_fwhm_for_voigt(b.total_fwhm_low_MHz, lorentz_fwhm_MHz),
            gaussian_fwhm_for_voigt(b.total_fwhm_high_MHz, lorentz_fwhm_MHz)};
}

/// Midpoint density of the log-sigmoid (geometric mean of the anchor densities).
inline double broadening_midpoint_cm3(const BroadeningLaw& b) {
    return std::sqrt(b.low_density_cm3 * b.high_density_cm3);
}

/// Normalized log-sigmoid in log10(n): 0 at and below the low anchor, 1 at and above the high one.
inline double broadening_fraction(const BroadeningLaw& b, double n_cm3) {
    if (!(n_cm3 >= 0.0)) throw DomainError("excess_broadening: density must be >= 0");
    if (n_cm3 <= b.low_density_cm3) return 0.0;
    if (n_cm3 >= b.high_density_cm3) return 1.0;
    const double a = std::log10(b.low_density_cm3), c = std::log10(b.high_density_cm3);
    const double mid = 0.5 * (a + c);
    const double k = b.steepness_per_decade;
    const double s_lo = detail::sigmoid(k * (a - mid)), s_hi = detail::sigmoid(k * (c - mid));
    return std::clamp((detail::sigmoid(k * (std::log10(n_cm3) - mid)) - s_lo) / (s_hi - s_lo), 0.0, 1.0);
}

/// Excess Gaussian FWHM (MHz) for the local carrier density, anchored on the zero-power composite width.
inline double excess_broadening(double n_cm3, const DefectOpticalModel& m) {
    const auto an = excess_anchors(m, effective_two_laser_linewidth(m, 0.0));
    return an.low_MHz + (an.high_MHz - an.low_MHz) * broadening_fraction(m.broadening, n_cm3);
}

/// Least-squares Stark coefficients from (E_par, E_perp, detuning) triples:
/// detuning = offset + quadratic * E_perp^2 + linear * E_par.
struct StarkFit {
    double quadratic, linear, offset;
};

inline StarkFit fit_stark_coefficients(const std::vector<double>& E_par, const std::vector<double>& E_perp,
                                       const std::vector<double>& detuning_GHz) {
    const auto n = static_cast<Eigen::Index>(detuning_GHz.size());
    if (n < 3 || E_par.size() != detuning_GHz.size() || E_perp.size() != detuning_GHz.size())
        throw DomainError("fit_stark_coefficients: need >= 3 paired points");
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        A(i, 0) = E_perp[i] * E_perp[i];
        A(i, 1) = E_par[i];
        A(i, 2) = 1.0;
        y[i] = detuning_GHz[i];
    }
    const Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
    return {c[0], c[1], c[2]};
}

} // namespace v2sim::optics
