#pragma once

#include <numbers>

namespace emlab::constants {

// CODATA 2018 (SI exact values where defined).
inline constexpr double planck_js = 6.62607015e-34;
inline constexpr double speed_of_light_m_s = 299792458.0;
inline constexpr double elementary_charge_c = 1.602176634e-19;
inline constexpr double atomic_mass_unit_kg = 1.66053906660e-27;
inline constexpr double hbar_js = planck_js / (2.0 * std::numbers::pi);
inline constexpr double angstrom_m = 1e-10;

/// h c in eV nm (about 1239.84198).
inline constexpr double hc_ev_nm = planck_js * speed_of_light_m_s / elementary_charge_c * 1e9;

/// S = C * dQ^2 * (hbar omega), dQ in amu^(1/2) Angstrom, hbar omega in eV.
/// From S = omega dQ^2 / (2 hbar) = E dQ^2 / (2 hbar^2):
/// C = amu * Angstrom^2 * eV / (2 hbar^2), about 119.6 per eV amu Angstrom^2.
inline constexpr double huang_rhys_coefficient =
    atomic_mass_unit_kg * angstrom_m * angstrom_m * elementary_charge_c / (2.0 * hbar_js * hbar_js);

}  // namespace emlab::constants
