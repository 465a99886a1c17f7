#pragma once

namespace lattice {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;

// CODATA 2018
inline constexpr double planck = 6.62607015e-34;          // J s
inline constexpr double hbar = planck / two_pi;           // J s
inline constexpr double atomic_mass_unit = 1.66053906660e-27; // kg
inline constexpr double standard_gravity = 9.80665;      // m/s^2

// 85Rb atomic mass
inline constexpr double rb85_mass_u = 84.911789738;
inline constexpr double rb85_mass = rb85_mass_u * atomic_mass_unit; // kg

} // namespace lattice
