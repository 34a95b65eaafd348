#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "v2sim/ionization/photoionization.hpp"

using namespace v2sim;
using namespace v2sim::ionization;

namespace {

double window_mass(const SpectralFunction& A, double lo, double hi) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < A.value.size(); ++i)
        if (A.energy_eV[i] >= lo && A.energy_eV[i + 1] <= hi)
            s += 0.5 * (A.value[i] + A.value[i + 1]) * (A.energy_eV[i + 1] - A.energy_eV[i]);
    return s;
}

PhotoionizationCrossSection flat_sigma(double value_cm2) {
    PhotoionizationCrossSection s;
    s.energy_eV = {0.9, 1.6};
    s.sigma_cm2 = {value_cm2, value_cm2};
    return s;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
    return v;
}

} // namespace

TEST(SpectralFunction, NoModesGivesSingleGaussian) {
    const VibrationalModeSet v{{}, 5.0};
    const auto A = spectral_function(v, EnergyGrid{-0.05, 0.05, 1001});
    const auto peak = std::max_element(A.value.begin(), A.value.end()) - A.value.begin();
    EXPECT_NEAR(A.energy_eV[static_cast<std::size_t>(peak)], 0.0, 1e-9);
    EXPECT_NEAR(A.integral(), 1.0, 1e-9);
    EXPECT_NEAR(A.first_moment(), 0.0, 1e-9);
    const double sig = 5e-3;
    EXPECT_NEAR(A.value[500], 1.0 / (std::sqrt(2 * kPi) * sig), 1e-3 / sig);
}

TEST(SpectralFunction, SingleModeReplicasCarryPoissonWeights) {
    const double S = 1.3, w = 0.06; // eV
    const VibrationalModeSet v{{{w * 1e3, S}}, 3.0};
    const auto A = spectral_function(v, EnergyGrid{-0.03, 0.45, 2401});
    double weight = std::exp(-S);
    for (int k = 0; k < 5; ++k) {
        EXPECT_NEAR(window_mass(A, k * w - 0.5 * w, k * w + 0.5 * w), weight, 2e-3) << k;
        weight *= S / (k + 1);
    }
}

TEST(SpectralFunction, TwoModesConvolve) {
    const double S1 = 0.5, w1 = 0.04, S2 = 0.8, w2 = 0.10;
    const VibrationalModeSet v{{{w1 * 1e3, S1}, {w2 * 1e3, S2}}, 3.0};
    const auto A = spectral_function(v, EnergyGrid{-0.03, 0.6, 3151});
    const double zpl = std::exp(-S1 - S2);
    EXPECT_NEAR(window_mass(A, -0.015, 0.015), zpl, 2e-3);
    EXPECT_NEAR(window_mass(A, w1 - 0.015, w1 + 0.015), zpl * S1, 2e-3);
    EXPECT_NEAR(window_mass(A, w2 - 0.015, w2 + 0.015), zpl * S2, 2e-3);
    EXPECT_NEAR(window_mass(A, w1 + w2 - 0.015, w1 + w2 + 0.015), zpl * S1 * S2, 2e-3);
}

TEST(SpectralFunction, NormAndFirstMomentOfDefaultSet) {
    const auto v = default_mode_set();
    const auto A = spectral_function(v, default_energy_grid(v));
    EXPECT_NEAR(A.integral(), 1.0, 1e-9);
    EXPECT_NEAR(A.first_moment(), v.relaxation_energy_eV(), 1e-3 * v.relaxation_energy_eV());
    for (double a : A.value) EXPECT_GT(a, -1e-6 * *std::max_element(A.value.begin(), A.value.end()));
}

TEST(Convolution, DeltaLikeSpectralFunctionIsIdentity) {
    const auto sel = sqrt_onset_cross_section();
    const VibrationalModeSet v{{}, 0.2};
    const auto A = spectral_function(v, EnergyGrid{-0.002, 0.002, 401});
    const auto pi = convolve_cross_section(sel, A);
    for (double e : {1.35, 1.5, 1.8, 2.0}) EXPECT_NEAR(pi(e), sel(e), 0.01 * sel(e)) << e;
    EXPECT_NEAR(pi(1.2), 0.0, 1e-22);
}

TEST(Convolution, MatchesDirectRiemannSum) {
    const auto sel = sqrt_onset_cross_section();
    const auto v = default_mode_set();
    const auto A = spectral_function(v, default_energy_grid(v));
    for (double e : {1.30, 1.40, 1.55}) {
        const auto pi = convolve_cross_section(sel, A, std::vector<double>{e});
        double acc = 0.0;
        const double h = A.energy_eV[1] - A.energy_eV[0];
        for (std::size_t j = 0; j < A.value.size(); ++j) {
            const double ep = e - A.energy_eV[j];
            if (ep > 0.0) acc += sel(ep) / ep * A.value[j] * h;
        }
        EXPECT_NEAR(pi(e), e * acc, 0.01 * e * acc) << e;
    }
}

TEST(Convolution, ZeroElectronicCrossSectionGivesZero) {
    ElectronicCrossSection sel;
    sel.energy_eV = {0.5, 3.0};
    sel.sigma_cm2 = {0.0, 0.0};
    const auto v = default_mode_set();
    const auto pi = convolve_cross_section(sel, spectral_function(v, default_energy_grid(v)));
    for (double s : pi.sigma_cm2) EXPECT_EQ(s, 0.0);
}

TEST(Convolution, PhononSidebandPullsOnsetBelowThreshold) {
    const auto sel = sqrt_onset_cross_section();
    const auto v = default_mode_set();
    const auto pi = convolve_cross_section(sel, spectral_function(v, default_energy_grid(v)));
    EXPECT_EQ(sel(1.28), 0.0);
    EXPECT_GT(pi(1.28), 0.0);
}

TEST(Rate, SpotArea) {
    EXPECT_NEAR(spot_area_um2(950.0, 0.75), 4.083, 1e-3);
    EXPECT_THROW(spot_area_um2(950.0, 0.0), DomainError);
}

TEST(Rate, FlatCrossSectionFallsAsInverseWavelength) {
    const auto s = flat_sigma(1e-17);
    double prev = 1e300;
    for (double l : linspace(880.0, 1200.0, 17)) {
        const double r = rate_per_power(s, l);
        EXPECT_LT(r, prev);
        prev = r;
    }
    EXPECT_NEAR(rate_per_power(s, 900.0) / rate_per_power(s, 1200.0), 1200.0 / 900.0, 1e-12);
}

TEST(Rate, NormalizedCurvePeaksAtOne) {
    const auto v = default_mode_set();
    const auto pi = convolve_cross_section(sqrt_onset_cross_section(), spectral_function(v, default_energy_grid(v)));
    const auto c = rate_curve(pi, linspace(880.0, 1200.0, 33));
    const auto n = c.normalized();
    EXPECT_DOUBLE_EQ(*std::max_element(n.begin(), n.end()), 1.0);
    for (double x : n) EXPECT_GE(x, 0.0);
}

TEST(FermiFit, NoiselessStepRecoversThreshold) {
    const auto l = linspace(880.0, 1200.0, 65);
    std::vector<double> y;
    for (double x : l) y.push_back(fermi_step(x, 948.0, 12.0, 1.0, 0.02));
    const auto f = fit_fermi_threshold(l, y);
    EXPECT_NEAR(f.threshold_nm, 948.0, 0.5);
    EXPECT_NEAR(f.width_nm, 12.0, 0.1);
    EXPECT_FALSE(f.width_diverged);
}

TEST(FermiFit, NoisyStepMedianWithinTolerance) {
    const auto l = linspace(880.0, 1200.0, 65);
    std::vector<double> th;
    for (std::uint64_t seed = 1; seed <= 21; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 0.05);
        std::vector<double> y;
        for (double x : l) y.push_back(fermi_step(x, 948.0, 12.0, 1.0, 0.0) + noise(rng));
        th.push_back(fit_fermi_threshold(l, y).threshold_nm);
    }
    std::nth_element(th.begin(), th.begin() + 10, th.end());
    EXPECT_NEAR(th[10], 948.0, 2.0);
}

TEST(FermiFit, FlatDataThrows) {
    const auto l = linspace(880.0, 1200.0, 20);
    EXPECT_THROW(fit_fermi_threshold(l, std::vector<double>(l.size(), 0.3)), NumericalError);
}

TEST(TwoPhoton, RateCombinesResonantAndSecondLaser) {
    TwoPhotonModel m;
    m.resonant_rate_per_nW = 0.05;
    m.saturation_power_nW = 10.0;
    m.curve.wavelength_nm = {900.0, 1000.0};
    m.curve.gamma_per_uW = {2.0, 4.0};
    m.curve.gamma_max_per_uW = 4.0;
    EXPECT_NEAR(two_photon_rate(10.0, 100.0, 950.0, m), 0.5 + 0.25 * 3.0 * 100.0, 1e-12);
    EXPECT_NEAR(two_photon_rate(10.0, 0.0, 950.0, m), 0.5, 1e-15);
    EXPECT_EQ(two_photon_rate(0.0, 100.0, 950.0, m), 0.0);
    EXPECT_THROW(two_photon_rate(-1.0, 1.0, 950.0, m), DomainError);
}

TEST(TwoPhoton, ExcitedOccupationSaturatesAtHalf) {
    EXPECT_DOUBLE_EQ(excited_occupation(10.0, 10.0), 0.25);
    EXPECT_NEAR(excited_occupation(1e9, 10.0), 0.5, 1e-8);
    double prev = -1.0;
    for (double p : {0.0, 1.0, 5.0, 20.0, 100.0}) {
        EXPECT_GT(excited_occupation(p, 10.0), prev);
        prev = excited_occupation(p, 10.0);
    }
}
