#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "v2sim/core/errors.hpp"
#include "v2sim/core/material.hpp"
#include "v2sim/core/units.hpp"

namespace v2sim::junction {

/// ln of the saturation current A * A* * T^2 * exp(-Phi_B / kT), in ln(A).
inline double log_saturation_current(const MaterialStack& stack, Kelvin T) {
    const double kT = thermal_voltage(T).value;
    const double area = stack.contact.area_m2();
    if (!(area > 0.0)) throw DomainError("iv_curve: contact area must be positive");
    const double A_star = richardson_constant(stack.m_eff_e_kg);
    return std::log(area * A_star) + 2.0 * std::log(T.value) - stack.schottky_barrier().value / kT;
}

/// Thermionic-emission current I = I_s (exp(V / (n kT)) - 1), evaluated in the log domain.
/// Currents beyond the double range saturate at the largest finite value.
inline double diode_current(const MaterialStack& stack, Kelvin T, double ideality, Volts V) {
    if (!(ideality >= 1.0)) throw DomainError("iv_curve: ideality must be >= 1");
    const double ln_is = log_saturation_current(stack, T);
    const double x = V.value / (ideality * thermal_voltage(T).value);
    if (x <= 0.0) return std::exp(ln_is) * std::expm1(x);
    const double ln_i = ln_is + x + std::log(-std::expm1(-x));
    if (ln_i > std::log(std::numeric_limits<double>::max())) return std::numeric_limits<double>::max();
    return std::exp(ln_i);
}

inline std::vector<double> iv_curve(const MaterialStack& stack, Kelvin T, double ideality,
                                    const std::vector<double>& voltages) {
    std::vector<double> out;
    out.reserve(voltages.size());
    for (double v : voltages) out.push_back(diode_current(stack, T, ideality, Volts{v}));
    return out;
}

/// Inverse of diode_current for a forward current: V = n kT ln(1 + I / I_s).
inline Volts forward_voltage_for_current(const MaterialStack& stack, Kelvin T, double ideality, double current_A) {
    if (!(ideality >= 1.0)) throw DomainError("forward_voltage_for_current: ideality must be >= 1");
    if (!(current_A > 0.0)) throw DomainError("forward_voltage_for_current: current must be positive");
    const double r = std::log(current_A) - log_saturation_current(stack, T);
    return Volts{ideality * thermal_voltage(T).value * v2sim::detail::softplus(r)};
}

} // namespace v2sim::junction
