#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "v2sim/core/errors.hpp"
#include "v2sim/fit/least_squares.hpp"
#include "v2sim/optics/lineshape.hpp"
#include "v2sim/optics/stark.hpp"

namespace v2sim::optics {

struct ScanGrid {
    double start_MHz = -500.0;
    double stop_MHz = 500.0;
    int points = 401;

    bool operator==(const ScanGrid&) const = default;

    double step() const { return points > 1 ? (stop_MHz - start_MHz) / (points - 1) : 0.0; }
    double at(int i) const { return start_MHz + i * step(); }
    std::vector<double> values() const {
        std::vector<double> v(static_cast<std::size_t>(points));
        for (int i = 0; i < points; ++i) v[static_cast<std::size_t>(i)] = at(i);
        return v;
    }
};

inline void validate(const ScanGrid& g) {
    if (g.points < 8) throw ValidationError("scan.points", "need at least 8 points");
    if (!(g.stop_MHz > g.start_MHz)) throw ValidationError("scan.stop_MHz", "must exceed scan.start_MHz");
}

struct ScanSettings {
    ScanGrid grid{};
    double power_nW = 1.0;
    double peak_counts = 400.0;       // expected counts per bin on resonance
    double background_counts = 5.0;   // expected counts per bin off resonance
    bool poisson_noise = true;

    bool operator==(const ScanSettings&) const = default;
};

struct PleFit {
    double center_MHz = 0.0;
    double fwhm_MHz = 0.0;
    double eta = 0.0;
    double amplitude = 0.0;
    double baseline = 0.0;
    bool reliable = false;
};

struct PleSpectrum {
    std::vector<double> detuning_MHz;
    std::vector<double> counts;
    PleFit fit;
};

/// Pseudo-Voigt fit (center, FWHM, mixing, amplitude, baseline). The mixing parameter is
/// kept in [0, 1] through a logistic map. Flags the fit unreliable when the peak lies on
/// the grid edge, the fit fails, or the fitted center/width leave the scanned range.
inline PleFit fit_ple(const std::vector<double>& x, const std::vector<double>& y) {
    PleFit out;
    if (x.size() != y.size() || x.size() < 8) return out;
    const auto imax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    const double ymax = y[imax];
    const double ymin = *std::min_element(y.begin(), y.end());
    const double span = x.back() - x.front();
    if (!(ymax > ymin)) return out;

    const double half = 0.5 * (ymax + ymin);
    std::size_t l = imax, r = imax;
    while (l > 0 && y[l] > half) --l;
    while (r + 1 < y.size() && y[r] > half) ++r;
    const double w0 = std::max(x[r] - x[l], 2.0 * (x[1] - x[0]));

    auto model = [](const Eigen::VectorXd& p, double xx) {
        const double eta = 1.0 / (1.0 + std::exp(-p[2]));
        return p[4] + p[3] * pseudo_voigt_unit(xx - p[0], std::abs(p[1]), eta);
    };
    Eigen::VectorXd p0(5);
    p0 << x[imax], w0, 0.0, ymax - ymin, ymin;
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) w[i] = 1.0 / std::sqrt(std::max(y[i], 1.0));
    try {
        const auto f = fit::least_squares(model, x, y, p0, w);
        out.center_MHz = f.params[0];
        out.fwhm_MHz = std::abs(f.params[1]);
        out.eta = 1.0 / (1.0 + std::exp(-f.params[2]));
        out.amplitude = f.params[3];
        out.baseline = f.params[4];
        out.reliable = imax > 0 && imax + 1 < y.size() && out.center_MHz > x.front() && out.center_MHz < x.back() &&
                       out.fwhm_MHz > 0.0 && out.fwhm_MHz < span && out.amplitude > 0.0;
    } catch (const NumericalError&) {
        out.reliable = false;
    }
    return out;
}

/// Expected counts per bin for a line centred at `center_MHz` (peak-normalized composite Voigt).
inline std::vector<double> expected_counts(const DefectOpticalModel& m, const ScanSettings& s, double gaussian_fwhm,
                                           const std::vector<double>& centers_per_bin) {
    const auto grid = s.grid.values();
    const double peak = composite_profile(m, s.power_nW, gaussian_fwhm, 0.0);
    std::vector<double> mu(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        mu[i] = s.background_counts +
                s.peak_counts * composite_profile(m, s.power_nW, gaussian_fwhm, grid[i] - centers_per_bin[i]) / peak;
    return mu;
}

inline std::vector<double> draw_counts(const std::vector<double>& mu, bool noise, std::mt19937_64& rng) {
    std::vector<double> c(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!noise) {
            c[i] = mu[i];
            continue;
        }
        std::poisson_distribution<long long> pd(mu[i]);
        c[i] = static_cast<double>(pd(rng));
    }
    return c;
}

/// Synthetic PLE scan of a single defect: Stark-shifted composite Voigt line with the
/// carrier-density excess broadening and per-bin Poisson noise, then fitted.
inline PleSpectrum synthesize_ple_scan(const DefectOpticalModel& m, double E_par_MVm, double E_perp_MVm,
                                       double n_local_cm3, const ScanSettings& s, std::uint64_t seed) {
    validate(m);
    validate(s.grid);
    const double center = 1e3 * stark_detuning(E_par_MVm, E_perp_MVm, m);
    const double g = excess_broadening(n_local_cm3, m);
    PleSpectrum out;
    out.detuning_MHz = s.grid.values();
    std::mt19937_64 rng(seed);
    out.counts = draw_counts(expected_counts(m, s, g, std::vector<double>(out.detuning_MHz.size(), center)),
                             s.poisson_noise, rng);
    out.fit = fit_ple(out.detuning_MHz, out.counts);
    return out;
}

} // namespace v2sim::optics
