#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <boost/math/tools/toms748_solve.hpp>

#include "v2sim/core/constants.hpp"
#include "v2sim/core/errors.hpp"
#include "v2sim/core/units.hpp"

namespace v2sim {

/// Top stripe contact. The device cross-section is modelled as the half-plane
/// to one side of the stripe centre, so only half the width enters the mesh.
struct ContactGeometry {
    double stripe_width_um = 20.0;
    double stripe_length_um = 1000.0;   // only used for the diode area

    double half_width_um() const { return 0.5 * stripe_width_um; }
    double area_m2() const { return stripe_width_um * stripe_length_um * 1e-12; }

    bool operator==(const ContactGeometry&) const = default;
};

/// Layered device description: Schottky metal / n-epi / n+ substrate / ohmic back contact.
/// Defaults are the 15 K simulation parameters of the sample; the static permittivity,
/// donor level and modelled substrate slab thickness are overridable assumptions.
struct MaterialStack {
    double metal_workfunction_eV = 4.5;      // Ti adhesion layer touches the SiC (Au: 5.1)
    double band_gap_eV = 3.23;
    double electron_affinity_eV = 3.24;
    double refractive_index = 2.588;
    double static_relative_permittivity = 9.66;
    double Nc_m3 = 1.8881e23;
    double Nv_m3 = 2.7885e23;
    double dos_reference_temperature_K = 15.0;
    double doping_epi_cm3 = 7e13;
    double doping_substrate_cm3 = 1e17;
    double mobility_epi = 237.02;            // m^2 V^-1 s^-1
    double mobility_substrate = 29.556;      // m^2 V^-1 s^-1
    double m_eff_e_kg = 3.6578e-31;
    double m_eff_h_kg = 2.4083e-30;
    double donor_ionization_energy_eV = 0.061;
    double donor_degeneracy = 2.0;
    double epi_thickness_um = 10.0;
    double substrate_thickness_um = 2.0;
    ContactGeometry contact{};

    bool operator==(const MaterialStack&) const = default;

    ElectronVolts schottky_barrier() const {
        return ElectronVolts{metal_workfunction_eV - electron_affinity_eV};
    }
};

/// Throws ValidationError naming the first offending field.
inline void validate(const MaterialStack& s) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ValidationError(std::string("material.") + name, "must be a positive finite number");
    };
    positive(s.band_gap_eV, "band_gap_eV");
    positive(s.refractive_index, "refractive_index");
    positive(s.static_relative_permittivity, "static_relative_permittivity");
    positive(s.Nc_m3, "Nc_m3");
    positive(s.Nv_m3, "Nv_m3");
    positive(s.dos_reference_temperature_K, "dos_reference_temperature_K");
    positive(s.doping_epi_cm3, "doping_epi_cm3");
    positive(s.doping_substrate_cm3, "doping_substrate_cm3");
    positive(s.mobility_epi, "mobility_epi");
    positive(s.mobility_substrate, "mobility_substrate");
    positive(s.m_eff_e_kg, "m_eff_e_kg");
    positive(s.m_eff_h_kg, "m_eff_h_kg");
    positive(s.donor_degeneracy, "donor_degeneracy");
    positive(s.epi_thickness_um, "epi_thickness_um");
    positive(s.substrate_thickness_um, "substrate_thickness_um");
    positive(s.contact.stripe_width_um, "contact.stripe_width_um");
    positive(s.contact.stripe_length_um, "contact.stripe_length_um");
    if (s.donor_ionization_energy_eV < 0.0)
        throw ValidationError("material.donor_ionization_energy_eV", "must be >= 0");
    if (!(s.electron_affinity_eV < s.metal_workfunction_eV))
        throw ValidationError("material.metal_workfunction_eV",
                              "must exceed the electron affinity for a rectifying contact");
}

/// Charge transition levels of the defect (energies in eV).
struct ChargeLevelDiagram {
    double gap_eV = 3.26;
    double v2_zpl_eV = 1.352;
    double ionization_threshold_minus_to_2minus_eV = 1.31;

    bool operator==(const ChargeLevelDiagram&) const = default;
};

inline void validate(const ChargeLevelDiagram& d) {
    if (!(d.gap_eV > 0.0)) throw ValidationError("levels.gap_eV", "must be positive");
    if (!(d.v2_zpl_eV > 0.0 && d.v2_zpl_eV < d.gap_eV))
        throw ValidationError("levels.v2_zpl_eV", "must lie inside the gap");
    if (!(d.ionization_threshold_minus_to_2minus_eV > 0.0 &&
          d.ionization_threshold_minus_to_2minus_eV < d.gap_eV))
        throw ValidationError("levels.ionization_threshold_minus_to_2minus_eV", "must lie inside the gap");
}

enum class Layer { Epi, Substrate };

/// How donors ionize: all ionized, or Fermi-statistics occupation of a single level.
enum class DonorModel { Complete, Incomplete };

inline std::string_view to_string(DonorModel m) {
    return m == DonorModel::Complete ? "complete" : "incomplete";
}

/// k_B T in eV.
inline ElectronVolts thermal_voltage(Kelvin T) {
    if (!(T.value > 0.0) || !std::isfinite(T.value))
        throw DomainError("thermal_voltage: temperature must be positive");
    return ElectronVolts{kBoltzmannEv * T.value};
}

/// Effective conduction-band density of states in m^-3, scaled as T^{3/2}
/// from the value given at the stack's reference temperature.
inline double conduction_dos_m3(const MaterialStack& s, Kelvin T) {
    return s.Nc_m3 * std::pow(T.value / s.dos_reference_temperature_K, 1.5);
}

inline double layer_doping_cm3(const MaterialStack& s, Layer layer) {
    return layer == Layer::Epi ? s.doping_epi_cm3 : s.doping_substrate_cm3;
}

namespace detail {
/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
} // namespace detail

struct BulkEquilibrium {
    PerCubicCentimeter electron_density;
    /// E_F - E_c (negative for a non-degenerate n-type layer).
    ElectronVolts fermi_level;
    double ionized_fraction = 1.0;
};

/// Charge neutrality n = N_D+ in a neutral bulk layer. With DonorModel::Incomplete
/// the donor occupation is N_D / (1 + g exp((E_F - E_D)/kT)), solved in the reduced
/// Fermi level eta = (E_F - E_c)/kT so freeze-out at a few kelvin stays representable.
inline BulkEquilibrium equilibrium_bulk_density(const MaterialStack& s, Layer layer, Kelvin T,
                                                DonorModel model = DonorModel::Incomplete) {
    const double kT = thermal_voltage(T).value;
    const double Nd = layer_doping_cm3(s, layer) * 1e6; // m^-3
    const double Nc = conduction_dos_m3(s, T);
    if (!(Nd > 0.0)) throw DomainError("equilibrium_bulk_density: doping must be positive");

    const double eta_full = std::log(Nd / Nc);
    if (model == DonorModel::Complete)
        return {PerCubicCentimeter{Nd * 1e-6}, ElectronVolts{eta_full * kT}, 1.0};

    const double ed = s.donor_ionization_energy_eV / kT + std::log(s.donor_degeneracy);
    // f(eta) = ln n - ln N_D+ ; strictly increasing in eta.
    auto f = [&](double eta) { return eta - eta_full + detail::softplus(eta + ed); };

    double lo = eta_full - ed - 60.0;
    double hi = eta_full + 1.0;
    const double flo = f(lo);
    const double fhi = f(hi);
    if (!(flo < 0.0 && fhi > 0.0)) {
        throw NumericalError("equilibrium_bulk_density: root not bracketed in [" + std::to_string(lo) +
                                 ", " + std::to_string(hi) + "], f = [" + std::to_string(flo) + ", " +
                                 std::to_string(fhi) + "]",
                             std::min(std::abs(flo), std::abs(fhi)));
    }
    std::uintmax_t max_iter = 200;
    auto tol = boost::math::tools::eps_tolerance<double>(50);
    auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, max_iter);
    if (max_iter >= 200)
        throw NumericalError("equilibrium_bulk_density: TOMS748 did not converge in [" +
                                 std::to_string(a) + ", " + std::to_string(b) + "]",
                             std::abs(f(0.5 * (a + b))));
    const double eta = 0.5 * (a + b);
    const double n = Nc * std::exp(eta);
    return {PerCubicCentimeter{n * 1e-6}, ElectronVolts{eta * kT}, n / Nd};
}

/// Effective Richardson constant A* = 4 pi q m k_B^2 / h^3 in A m^-2 K^-2.
inline double richardson_constant(double m_eff_kg) {
    if (!(m_eff_kg > 0.0)) throw DomainError("richardson_constant: effective mass must be positive");
    return 4.0 * kPi * si::q * m_eff_kg * si::k_B * si::k_B / (si::h * si::h * si::h);
}

} // namespace v2sim
