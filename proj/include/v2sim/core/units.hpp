#pragma once

#include <compare>

namespace v2sim {

/// A double tagged with its unit. Arithmetic that keeps the unit is allowed;
/// anything else has to go through `.value` explicitly.
template <class Tag>
struct Quantity {
    double value = 0.0;

    constexpr Quantity() = default;
    constexpr explicit Quantity(double v) : value(v) {}

    constexpr auto operator<=>(const Quantity&) const = default;

    constexpr Quantity operator-() const { return Quantity{-value}; }
    constexpr Quantity& operator+=(Quantity o) { value += o.value; return *this; }
    constexpr Quantity& operator-=(Quantity o) { value -= o.value; return *this; }
    friend constexpr Quantity operator+(Quantity a, Quantity b) { return Quantity{a.value + b.value}; }
    friend constexpr Quantity operator-(Quantity a, Quantity b) { return Quantity{a.value - b.value}; }
    friend constexpr Quantity operator*(double s, Quantity a) { return Quantity{s * a.value}; }
    friend constexpr Quantity operator*(Quantity a, double s) { return Quantity{s * a.value}; }
    friend constexpr Quantity operator/(Quantity a, double s) { return Quantity{a.value / s}; }
    friend constexpr double operator/(Quantity a, Quantity b) { return a.value / b.value; }
};

using Kelvin = Quantity<struct KelvinTag>;
using ElectronVolts = Quantity<struct ElectronVoltTag>;
using Volts = Quantity<struct VoltTag>;
using Micrometers = Quantity<struct MicrometerTag>;
/// Number density in cm^-3.
using PerCubicCentimeter = Quantity<struct PerCubicCentimeterTag>;

namespace literals {
constexpr Kelvin operator""_K(long double v) { return Kelvin{static_cast<double>(v)}; }
constexpr Kelvin operator""_K(unsigned long long v) { return Kelvin{static_cast<double>(v)}; }
constexpr Volts operator""_V(long double v) { return Volts{static_cast<double>(v)}; }
constexpr Volts operator""_V(unsigned long long v) { return Volts{static_cast<double>(v)}; }
constexpr ElectronVolts operator""_eV(long double v) { return ElectronVolts{static_cast<double>(v)}; }
constexpr Micrometers operator""_um(long double v) { return Micrometers{static_cast<double>(v)}; }
constexpr Micrometers operator""_um(unsigned long long v) { return Micrometers{static_cast<double>(v)}; }
} // namespace literals

} // namespace v2sim
