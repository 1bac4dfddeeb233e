#pragma once

// Hartree atomic units are used everywhere inside the library. Laboratory
// units (cm^-1, fs, W/cm^2) only appear at the configuration boundary.

#include <numbers>

namespace linabs::units {

inline constexpr double kPi = std::numbers::pi;

// CODATA 2018.
inline constexpr double kWavenumberPerHartree = 219474.6313632;  // cm^-1
inline constexpr double kFemtosecondsPerAtomicTime = 0.02418884254;
// Intensity c*eps0*E^2 of a 1 a.u. field, i.e. twice the atomic unit of
// intensity 3.5094475e16 W/cm^2. With this convention a peak spectral
// amplitude A(w0) = 1 of a 30 fs transform-limited pulse maps onto
// 8.054e10 W/cm^2.
inline constexpr double kWattsPerCm2PerSquaredField = 2.0 * 3.50944758e16;

constexpr double wavenumber_to_hartree(double cm) { return cm / kWavenumberPerHartree; }
constexpr double hartree_to_wavenumber(double e) { return e * kWavenumberPerHartree; }
constexpr double fs_to_atomic(double fs) { return fs / kFemtosecondsPerAtomicTime; }
constexpr double atomic_to_fs(double t) { return t * kFemtosecondsPerAtomicTime; }
constexpr double field_to_intensity(double e) { return e * e * kWattsPerCm2PerSquaredField; }

}  // namespace linabs::units
