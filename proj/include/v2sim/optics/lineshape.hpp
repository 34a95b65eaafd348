#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "v2sim/core/constants.hpp"
#include "v2sim/core/errors.hpp"

namespace v2sim::optics {

inline constexpr double kFwhmPerSigma = 2.3548200450309493; // 2 sqrt(2 ln 2)

/// Area-normalized Lorentzian with full width `fwhm`.
inline double lorentzian(double x, double fwhm) {
    const double g = 0.5 * fwhm;
    return g / (kPi * (x * x + g * g));
}

/// Area-normalized Gaussian with full width `fwhm`.
inline double gaussian(double x, double fwhm) {
    const double s = fwhm / kFwhmPerSigma;
    return std::exp(-0.5 * x * x / (s * s)) / (s * std::sqrt(2.0 * kPi));
}

/// Area-normalized Voigt profile by direct quadrature of the Gaussian-Lorentzian convolution.
inline double voigt(double x, double fwhm_L, double fwhm_G) {
    if (fwhm_L < 0.0 || fwhm_G < 0.0) throw DomainError("voigt: widths must be >= 0");
    if (fwhm_G == 0.0) return lorentzian(x, fwhm_L);
    if (fwhm_L == 0.0) return gaussian(x, fwhm_G);
    const double s = fwhm_G / kFwhmPerSigma;
    auto f = [&](double t) { return gaussian(t, fwhm_G) * lorentzian(x - t, fwhm_L); };
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    const double a = -8.0 * s, b = 8.0 * s;
    if (x <= a || x >= b) return GK::integrate(f, a, b, 10, 1e-10);
    return GK::integrate(f, a, x, 10, 1e-10) + GK::integrate(f, x, b, 10, 1e-10);
}

/// Olivero-Longbothum Voigt width: 0.5346 f_L + sqrt(0.2166 f_L^2 + f_G^2).
inline double voigt_fwhm(double fwhm_L, double fwhm_G) {
    return 0.5346 * fwhm_L + std::sqrt(0.2166 * fwhm_L * fwhm_L + fwhm_G * fwhm_G);
}

/// Gaussian width giving Voigt width `fwhm_V` for a fixed Lorentzian width (inverse of voigt_fwhm).
inline double gaussian_fwhm_for_voigt(double fwhm_V, double fwhm_L) {
    const double r = fwhm_V - 0.5346 * fwhm_L;
    const double g2 = r * r - 0.2166 * fwhm_L * fwhm_L;
    if (!(fwhm_V >= fwhm_L) || g2 < 0.0) return 0.0;
    return std::sqrt(g2);
}

/// Pseudo-Voigt with unit peak height: eta * L + (1 - eta) * G, both of width `fwhm`.
inline double pseudo_voigt_unit(double x, double fwhm, double eta) {
    const double h = 0.5 * fwhm;
    const double l = h * h / (x * x + h * h);
    const double g = std::exp(-std::log(2.0) * x * x / (h * h));
    return eta * l + (1.0 - eta) * g;
}

/// Full width at half maximum of a symmetric profile peaked at 0, by bisection.
template <class Profile>
double numeric_fwhm(Profile&& p, double width_guess) {
    const double half = 0.5 * p(0.0);
    double lo = 0.0, hi = std::max(width_guess, 1e-12);
    while (p(hi) > half) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (p(mid) > half ? lo : hi) = mid;
    }
    return lo + hi;
}

} // namespace v2sim::optics
