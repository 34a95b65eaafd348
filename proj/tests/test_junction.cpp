#include <gtest/gtest.h>

#include <cmath>

#include "v2sim/junction/depletion.hpp"
#include "v2sim/junction/diode.hpp"
#include "v2sim/junction/mesh.hpp"
#include "v2sim/junction/poisson.hpp"

using namespace v2sim;
using namespace v2sim::junction;

namespace {

MaterialStack thick_epi() {
    MaterialStack s;
    s.epi_thickness_um = 80.0;
    return s;
}

// Width of the electron-free layer, integrated away from the epi/substrate accumulation layer.
double column_width_um(const FieldSolution& sol, const MaterialStack& s) {
    double W = 0.0;
    const Mesh2D& m = sol.mesh;
    for (std::size_t j = 0; j < m.nz(); ++j) {
        if (m.z_um[j] > 0.75 * s.epi_thickness_um) break;
        W += (1.0 - sol.n_cm3[j] / s.doping_epi_cm3) * m.dual_dz(j);
    }
    return W;
}

// Depletion approximation with the majority-carrier tail correction.
double analytic_width_um(const MaterialStack& s, double T, double VR) {
    const double kT = kBoltzmannEv * T;
    const double Nc = conduction_dos_m3(s, Kelvin{T}) * 1e-6;
    const double vbi = s.schottky_barrier().value - kT * std::log(Nc / s.doping_epi_cm3);
    return std::sqrt(2.0 * s.static_relative_permittivity * si::eps0 * (vbi + VR - kT) /
                     (si::q * s.doping_epi_cm3 * 1e6)) * 1e6;
}

FieldSolution synthetic(const std::vector<double>& x, const std::vector<double>& z) {
    FieldSolution s;
    s.mesh.x_um = x;
    s.mesh.z_um = z;
    s.mesh.contact_edge_um = 0.0;
    classify_nodes(s.mesh);
    s.n_cm3.assign(s.mesh.size(), 1e14);
    s.Ex_MVm.assign(s.mesh.size(), 0.0);
    s.Ez_MVm.assign(s.mesh.size(), 0.0);
    return s;
}

const MeshSpec kCoarse{100, 50, 60.0, 4.0};

} // namespace

class OneDimensionalWidth : public ::testing::TestWithParam<double> {};

TEST_P(OneDimensionalWidth, MatchesDepletionApproximation) {
    const MaterialStack s = thick_epi();
    const double VR = GetParam();
    const auto sol = solve_poisson(s, make_column_mesh(s, 801), Volts{-VR}, Kelvin{300.0});
    EXPECT_TRUE(sol.report.converged);
    const double W = column_width_um(sol, s);
    const double Wa = analytic_width_um(s, 300.0, VR);
    EXPECT_NEAR(W, Wa, 0.02 * Wa) << "V_R = " << VR;
}

INSTANTIATE_TEST_SUITE_P(ReverseBias, OneDimensionalWidth, ::testing::Values(0.0, 10.0, 50.0, 150.0));

TEST(Poisson, ChargeFreeLimitIsLinear) {
    MaterialStack z;
    z.doping_epi_cm3 = 1e-6;
    z.doping_substrate_cm3 = 1e-6;
    const auto m = make_column_mesh(z, 101);
    const auto sol = solve_poisson(z, m, Volts{-5.0}, Kelvin{300.0});
    const double a = sol.phi_V.front(), b = sol.phi_V.back(), L = m.z_um.back();
    for (std::size_t j = 0; j < m.nz(); ++j) EXPECT_NEAR(sol.phi_V[j], a + (b - a) * m.z_um[j] / L, 1e-9);
}

TEST(Poisson, GaussLawHoldsIn2D) {
    const MaterialStack s;
    const auto m = make_device_mesh(s, kCoarse);
    for (double V : {0.0, -20.0, -80.0}) {
        const auto sol = solve_poisson(s, m, Volts{V}, Kelvin{15.0});
        EXPECT_LT(sol.report.gauss_law_error, 1e-3) << V;
    }
}

TEST(Poisson, DepletedUnderContactAtZeroBias) {
    const MaterialStack s;
    const auto sol = solve_poisson(s, make_device_mesh(s, kCoarse), Volts{0.0}, Kelvin{15.0});
    EXPECT_LT(density_at(sol, 0.5 * sol.mesh.contact_edge_um, 0.5), kDepletionThresholdCm3);
    EXPECT_GT(density_at(sol, sol.mesh.contact_edge_um + 50.0, 8.0), 1e13);
}

TEST(Poisson, WarmStartReproducesColdSolution) {
    const MaterialStack s;
    const auto m = make_device_mesh(s, kCoarse);
    const auto guess = solve_poisson(s, m, Volts{-10.0}, Kelvin{15.0});
    SolverOptions o;
    o.initial_guess = &guess;
    const auto warm = solve_poisson(s, m, Volts{-30.0}, Kelvin{15.0}, o);
    const auto cold = solve_poisson(s, m, Volts{-30.0}, Kelvin{15.0});
    for (std::size_t k = 0; k < m.size(); k += 37) EXPECT_NEAR(warm.phi_V[k], cold.phi_V[k], 1e-6);
}

TEST(Poisson, DepletedAreaGrowsWithReverseBias) {
    const MaterialStack s;
    const auto m = make_device_mesh(s, kCoarse);
    const DefectSite site;
    double prev_area = -1.0, prev_n = 1e300;
    for (double V : {0.0, -5.0, -15.0, -30.0, -60.0}) {
        const auto sol = solve_poisson(s, m, Volts{V}, Kelvin{15.0});
        const double a = depleted_area(sol), n = density_at(sol, site);
        EXPECT_GT(a, prev_area) << V;
        EXPECT_LE(n, prev_n * (1.0 + 1e-9)) << V;
        prev_area = a;
        prev_n = n;
    }
}

TEST(Poisson, AreaConvergesUnderRefinement) {
    const MaterialStack s;
    const auto coarse = solve_poisson(s, make_device_mesh(s, kCoarse), Volts{-30.0}, Kelvin{15.0});
    const auto fine = solve_poisson(s, make_device_mesh(s, MeshSpec{200, 100, 60.0, 4.0}), Volts{-30.0}, Kelvin{15.0});
    const double a = depleted_area(coarse), b = depleted_area(fine);
    EXPECT_NEAR(a, b, 0.05 * b);
}

TEST(Contour, UniformDensityHasNoBoundary) {
    const auto s = synthetic({0, 2, 4, 6, 8, 10}, {0, 2, 4, 6});
    EXPECT_TRUE(depletion_boundary(s).empty());
}

TEST(Contour, StepDensityGivesVerticalLine) {
    auto s = synthetic({0, 2, 4, 6, 8, 10}, {0, 2, 4, 6});
    for (std::size_t j = 0; j < s.mesh.nz(); ++j)
        for (std::size_t i = 0; i < s.mesh.nx(); ++i)
            s.n_cm3[s.mesh.index(i, j)] = s.mesh.x_um[i] <= 4.0 ? 1e10 : 1e14;
    const auto lines = depletion_boundary(s);
    ASSERT_EQ(lines.size(), 1u);
    ASSERT_EQ(lines[0].size(), 4u);
    for (const auto& p : lines[0]) EXPECT_NEAR(p.x_um, 5.0, 1e-12);
    const auto [lo, hi] = std::minmax({lines[0].front().z_um, lines[0].back().z_um});
    EXPECT_DOUBLE_EQ(lo, 0.0);
    EXPECT_DOUBLE_EQ(hi, 6.0);
}

TEST(SiteField, UniformFieldIsReturnedExactly) {
    auto s = synthetic({0, 5, 10, 20, 40}, {0, 1, 3, 6, 10});
    s.Ez_MVm.assign(s.mesh.size(), 1.5);
    s.Ex_MVm.assign(s.mesh.size(), -0.7);
    const auto f = field_at(s, DefectSite{13.3, 2.2});
    EXPECT_DOUBLE_EQ(f.parallel_MVm, 1.5);
    EXPECT_DOUBLE_EQ(f.perpendicular_MVm, -0.7);
    EXPECT_THROW(field_at(s, DefectSite{100.0, 2.0}), DomainError);
}

TEST(DepletionVoltage, SiteUnderContactIsAlreadyDepleted) {
    const MaterialStack s;
    const auto r = depletion_voltage(s, make_device_mesh(s, kCoarse), DefectSite{-5.0, 1.0}, Kelvin{15.0});
    EXPECT_EQ(r.status, DepletionStatus::AlreadyDepleted);
    EXPECT_EQ(r.solves, 1);
}

TEST(DepletionVoltage, DistantSiteIsNotReachedInRange) {
    const MaterialStack s;
    DepletionSearch search;
    search.most_negative_V = -20.0;
    const auto r = depletion_voltage(s, make_device_mesh(s, kCoarse), DefectSite{55.0, 8.0}, Kelvin{15.0}, search);
    EXPECT_EQ(r.status, DepletionStatus::NotDepletedInRange);
}

TEST(DepletionVoltage, BisectionBracketsTheThreshold) {
    const MaterialStack s;
    const auto m = make_device_mesh(s, kCoarse);
    const DefectSite site;
    const auto r = depletion_voltage(s, m, site, Kelvin{15.0});
    ASSERT_EQ(r.status, DepletionStatus::Depleted);
    EXPECT_LT(r.voltage_V, 0.0);
    const auto below = solve_poisson(s, m, Volts{r.voltage_V - 0.1}, Kelvin{15.0});
    const auto above = solve_poisson(s, m, Volts{r.voltage_V + 0.1}, Kelvin{15.0});
    EXPECT_LT(density_at(below, site), kDepletionThresholdCm3);
    EXPECT_GT(density_at(above, site), kDepletionThresholdCm3);
}

TEST(Diode, ZeroBiasCarriesNoCurrent) {
    const MaterialStack s;
    EXPECT_EQ(diode_current(s, Kelvin{300.0}, 1.2, Volts{0.0}), 0.0);
}

TEST(Diode, ReverseCurrentSaturates) {
    const MaterialStack s;
    const double Is = std::exp(log_saturation_current(s, Kelvin{300.0}));
    EXPECT_NEAR(diode_current(s, Kelvin{300.0}, 1.0, Volts{-5.0}), -Is, 1e-12 * Is);
}

TEST(Diode, ForwardVoltageRisesAsTemperatureFalls) {
    const MaterialStack s;
    double prev = 0.0;
    for (double T : {300.0, 200.0, 100.0, 50.0, 15.0}) {
        const double v = forward_voltage_for_current(s, Kelvin{T}, 15.0, 1e-3).value;
        EXPECT_GT(v, prev) << T;
        prev = v;
    }
}

TEST(Diode, ForwardVoltageInvertsCurrent) {
    const MaterialStack s;
    for (double T : {15.0, 100.0, 300.0})
        for (double I : {1e-9, 1e-6, 1e-3}) {
            const Volts v = forward_voltage_for_current(s, Kelvin{T}, 2.0, I);
            EXPECT_NEAR(diode_current(s, Kelvin{T}, 2.0, v), I, 1e-8 * I);
        }
}

TEST(Diode, CurrentIsMonotoneInBias) {
    const MaterialStack s;
    std::vector<double> v;
    for (int k = -20; k <= 40; ++k) v.push_back(0.05 * k);
    const auto I = iv_curve(s, Kelvin{100.0}, 1.5, v);
    for (std::size_t k = 1; k < I.size(); ++k) EXPECT_GE(I[k], I[k - 1]);
}
