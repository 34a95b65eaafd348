#pragma once

#include <numbers>

namespace v2sim {

/// CODATA 2018 exact / recommended values.
struct PhysicalConstants {
    double elementary_charge = 1.602176634e-19;   // C
    double boltzmann = 8.617333262e-5;            // eV/K
    double planck = 4.135667696e-15;              // eV s
    double speed_of_light = 299792458.0;          // m/s
    double vacuum_permittivity = 8.8541878128e-12; // F/m
    double fine_structure_alpha = 7.2973525693e-3;
};

inline constexpr PhysicalConstants kConstants{};

namespace si {
inline constexpr double q = 1.602176634e-19;          // C
inline constexpr double k_B = 1.380649e-23;           // J/K
inline constexpr double h = 6.62607015e-34;           // J s
inline constexpr double c = 299792458.0;              // m/s
inline constexpr double eps0 = 8.8541878128e-12;      // F/m
inline constexpr double m_e = 9.1093837015e-31;       // kg
} // namespace si

inline constexpr double kBoltzmannEv = 8.617333262e-5; // eV/K
inline constexpr double kPlanckEvS = 4.135667696e-15;  // eV s
/// h*c in eV nm, for photon energy <-> wavelength.
inline constexpr double kHcEvNm = kPlanckEvS * si::c * 1e9;

inline constexpr double kPi = std::numbers::pi;

inline constexpr double photon_energy_eV(double wavelength_nm) { return kHcEvNm / wavelength_nm; }
inline constexpr double photon_wavelength_nm(double energy_eV) { return kHcEvNm / energy_eV; }

} // namespace v2sim
