#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "v2sim/trap/markov.hpp"

using namespace v2sim;
using namespace v2sim::trap;

namespace {

TrapMarkovModel two_state(double k01, double k10, double shift_MHz = 400.0) {
    TrapMarkovModel m;
    m.n_states = 2;
    m.line_shift_MHz = {-shift_MHz, shift_MHz};
    m.generators[Condition::Dark] = generator_from_rates(2, {{0, 1, k01}, {1, 0, k10}});
    m.generators[Condition::Resonant] = generator_from_rates(2, {{0, 1, 1e4}});
    m.generators[Condition::Depleted] = Generator::Zero(2, 2);
    return m;
}

} // namespace

TEST(Stationary, TwoStateBalance) {
    const auto r = stationary_distribution(generator_from_rates(2, {{0, 1, 3.0}, {1, 0, 7.0}}));
    EXPECT_FALSE(r.reducible);
    EXPECT_NEAR(r.distribution[0], 0.7, 1e-12);
    EXPECT_NEAR(r.distribution[1], 0.3, 1e-12);
}

TEST(Stationary, DefaultConditions) {
    const auto m = default_trap_model();
    const auto dark = stationary_distribution(m.generator(Condition::Dark)).distribution;
    EXPECT_NEAR(dark[0], 0.0, 1e-12);
    EXPECT_NEAR(dark[1], 0.8, 1e-12);
    EXPECT_NEAR(dark[2], 0.2, 1e-12);
    const auto repump = stationary_distribution(m.generator(Condition::Repump)).distribution;
    EXPECT_NEAR(repump[0], 0.5, 1e-12);
    EXPECT_NEAR(repump[1], 0.5, 1e-12);
    EXPECT_NEAR(repump[2], 0.0, 1e-12);
}

TEST(Stationary, ZeroGeneratorMixesAllAbsorbingStates) {
    const auto r = stationary_distribution(Generator::Zero(3, 3));
    EXPECT_TRUE(r.reducible);
    EXPECT_EQ(r.per_class.size(), 3u);
    for (double p : r.distribution) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
}

TEST(Stationary, IsLeftNullVectorForRandomGenerators) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.1, 50.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::array<double, 3>> rates;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (i != j) rates.push_back({double(i), double(j), u(rng)});
        const auto q = generator_from_rates(4, rates);
        const auto pi = stationary_distribution(q).distribution;
        const Eigen::RowVectorXd p = Eigen::Map<const Eigen::RowVectorXd>(pi.data(), 4);
        EXPECT_LT((p * q).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
        EXPECT_GE(p.minCoeff(), 0.0);
    }
}

TEST(Generator, RejectsBadRows) {
    Generator q = Generator::Zero(2, 2);
    q(0, 1) = 1.0;
    EXPECT_THROW(validate(q), ValidationError);
    q(0, 0) = -1.0;
    q(1, 0) = -2.0;
    q(1, 1) = 2.0;
    EXPECT_THROW(validate(q), ValidationError);
}

TEST(Propagate, ConservesProbabilityAndReachesStationary) {
    const auto q = default_trap_model().generator(Condition::Dark);
    const auto p = propagate(q, {1.0, 0.0, 0.0}, 100.0);
    double s = 0.0;
    for (double x : p) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_NEAR(p[1], 0.8, 1e-9);
}

TEST(Gillespie, TwoStateOccupancyWithinThreeSigma) {
    const auto m = two_state(300.0, 700.0);
    const double T = 2000.0;
    const auto tr = simulate_trajectory(m, {{Condition::Dark, T}}, T, 99);
    const double occ0 = occupancy(tr, 2)[0];
    const double pi0 = 0.7, lam = 1.0; // per ms
    const double sigma = std::sqrt(2.0 * pi0 * (1.0 - pi0) / (lam * T));
    EXPECT_NEAR(occ0, pi0, 3.0 * sigma);
}

TEST(Gillespie, DwellTimesAreExponential) {
    const auto m = two_state(300.0, 700.0);
    const auto tr = simulate_trajectory(m, {{Condition::Dark, 5000.0}}, 5000.0, 2024);
    auto d = dwell_times(tr, 0);
    ASSERT_GT(d.size(), 500u);
    std::sort(d.begin(), d.end());
    const double rate = 0.3; // per ms out of state 0
    double D = 0.0;
    const double n = static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double F = 1.0 - std::exp(-rate * d[i]);
        D = std::max({D, std::abs(F - i / n), std::abs((i + 1) / n - F)});
    }
    EXPECT_LT(D, 1.63 / std::sqrt(n)); // 1% Kolmogorov-Smirnov critical value
}

TEST(Gillespie, DepletedTrapNeverJumps) {
    const auto m = default_trap_model();
    for (int s0 = 0; s0 < 3; ++s0) {
        const auto tr = simulate_trajectory(m, {{Condition::Depleted, 1e4}}, 1e4, 5, s0);
        EXPECT_EQ(tr.states.size(), 1u);
        EXPECT_EQ(tr.states[0], s0);
    }
}

TEST(Gillespie, ScheduleSwitchesConditions) {
    const auto m = default_trap_model();
    const auto tr = simulate_trajectory(m, {{Condition::Dark, 50.0}, {Condition::Depleted, 50.0}}, 100.0, 3, 1);
    EXPECT_LE(tr.times_ms.back(), 50.0);
}

TEST(Gillespie, SameSeedSameTrajectory) {
    const auto m = default_trap_model();
    const auto a = simulate_trajectory(m, {{Condition::Dark, 100.0}}, 100.0, 8);
    const auto b = simulate_trajectory(m, {{Condition::Dark, 100.0}}, 100.0, 8);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.times_ms, b.times_ms);
}

TEST(Transient, RecoveryRateIsSumOfRates) {
    const auto m = two_state(300.0, 700.0);
    TransientProtocol p;
    p.initial = Condition::Resonant;
    p.pump = Condition::Dark;
    p.probe_state = 1;
    p.ensemble = 4000;
    for (int k = 0; k <= 30; ++k) p.durations_ms.push_back(0.2 * k);
    const auto r = transient_recovery(m, p, 31);
    ASSERT_TRUE(r.fit_ok);
    EXPECT_NEAR(r.fitted_rate_per_ms, 1.0, 0.05);
    EXPECT_NEAR(dominant_relaxation_rate_per_ms(m.generator(Condition::Dark), {0.0, 1.0}, 1), 1.0, 1e-9);
}

TEST(Transient, ZeroPumpDurationKeepsInitialDistribution) {
    const auto m = default_trap_model();
    TransientProtocol p;
    p.durations_ms = {0.0, 1.0, 2.0};
    p.probe_state = 2;
    p.ensemble = 20000;
    const auto r = transient_recovery(m, p, 4);
    const double p2 = stationary_distribution(m.generator(Condition::Resonant)).distribution[2];
    EXPECT_NEAR(r.occupancy[0], p2, 3.0 * std::sqrt(p2 * (1 - p2) / p.ensemble));
}

TEST(Transient, SignsFollowTheTargetSteadyState) {
    const auto m = default_trap_model();
    TransientProtocol p;
    p.ensemble = 3000;
    for (int k = 0; k <= 20; ++k) p.durations_ms.push_back(0.5 * k);
    p.probe_state = 1;
    const auto up = transient_recovery(m, p, 12);
    p.probe_state = 2;
    const auto down = transient_recovery(m, p, 12);
    ASSERT_TRUE(up.fit_ok);
    ASSERT_TRUE(down.fit_ok);
    EXPECT_LT(up.amplitude, 0.0);
    EXPECT_GT(down.amplitude, 0.0);
    EXPECT_NEAR(up.plateau, 0.8, 0.05);
    EXPECT_NEAR(down.plateau, 0.2, 0.05);
}

TEST(Relaxation, EigenRatesOfDefaultDarkGenerator) {
    auto r = relaxation_rates_per_ms(default_trap_model().generator(Condition::Dark));
    std::sort(r.begin(), r.end());
    ASSERT_EQ(r.size(), 2u);
    EXPECT_NEAR(r[0], 0.5, 1e-9);
    EXPECT_NEAR(r[1], 1.0, 1e-9);
}

namespace {

TrapScanSettings trap_scan() {
    TrapScanSettings s;
    s.scan.grid = optics::ScanGrid{-800.0, 800.0, 321};
    s.scan.power_nW = 0.0;
    s.n_scans = 20;
    s.dwell_per_bin_ms = 0.1;
    s.n_local_cm3 = 0.0;
    return s;
}

} // namespace

TEST(MotionalAveraging, SlowSwitchingShowsDiscreteLines) {
    const optics::DefectOpticalModel om;
    const auto scans = ple_with_trap(om, two_state(1.0, 1.0), Condition::Dark, trap_scan(), 21);
    int on_a_line = 0;
    for (const auto& s : scans)
        if (std::abs(std::abs(s.spectrum.fit.center_MHz) - 400.0) < 30.0) ++on_a_line;
    EXPECT_GE(on_a_line, 16);
}

TEST(MotionalAveraging, FastSwitchingCollapsesToMean) {
    const optics::DefectOpticalModel om;
    const auto scans = ple_with_trap(om, two_state(1e7, 1e7), Condition::Dark, trap_scan(), 21);
    for (const auto& s : scans) {
        EXPECT_LT(std::abs(s.spectrum.fit.center_MHz), 30.0);
        EXPECT_LT(s.spectrum.fit.fwhm_MHz, 60.0);
    }
}

TEST(MotionalAveraging, FasterSwitchingNarrowsTheAveragedLine) {
    const optics::DefectOpticalModel om;
    // RMS spread of the background-subtracted, scan-summed spectrum about its centroid.
    auto rms_width = [&](double k) {
        auto s = trap_scan();
        s.scan.poisson_noise = false;
        s.n_scans = 200;
        const auto scans = ple_with_trap(om, two_state(k, k), Condition::Dark, s, 21);
        const auto& x = scans[0].spectrum.detuning_MHz;
        std::vector<double> y(x.size(), 0.0);
        for (const auto& sc : scans)
            for (std::size_t i = 0; i < x.size(); ++i) y[i] += sc.spectrum.counts[i] - s.scan.background_counts;
        double w = 0.0, m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            w += y[i];
            m1 += y[i] * x[i];
            m2 += y[i] * x[i] * x[i];
        }
        m1 /= w;
        return std::sqrt(m2 / w - m1 * m1);
    };
    const double slow = rms_width(3.0), mid = rms_width(1e4), fast = rms_width(1e6);
    EXPECT_GT(slow, mid);
    EXPECT_GT(mid, fast);
    EXPECT_GT(slow, 300.0);
}

TEST(TrapLines, DarkAndRepumpPopulateDifferentLines) {
    const optics::DefectOpticalModel om;
    const auto m = default_trap_model();
    auto s = trap_scan();
    s.n_scans = 40;
    auto count_near = [](const std::vector<TrapScan>& scans, double c) {
        int n = 0;
        for (const auto& t : scans)
            if (std::abs(t.spectrum.fit.center_MHz - c) < 60.0) ++n;
        return n;
    };
    const auto dark = ple_with_trap(om, m, Condition::Dark, s, 77, 1);
    EXPECT_EQ(count_near(dark, -400.0), 0);
    EXPECT_GT(count_near(dark, 0.0) + count_near(dark, 400.0), 0);
    const auto depleted = ple_with_trap(om, m, Condition::Depleted, s, 77, 0);
    EXPECT_EQ(count_near(depleted, -400.0), 40);
}
