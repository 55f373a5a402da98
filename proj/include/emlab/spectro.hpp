#pragma once

#include "emlab/spectrum.hpp"

namespace emlab {

enum class ConvertDirection { NanometerToElectronVolt, ElectronVoltToNanometer };

/// E [eV] = hc / lambda [nm] and back. Throws DomainError for value <= 0.
double wavelength_energy_convert(double value, ConvertDirection direction);

/// Stokes Raman line: 1/lambda_out = 1/lambda_exc - shift (in cm^-1).
/// Throws DomainError if the shift reaches the excitation wavenumber.
double raman_shifted_wavelength(double excitation_nm, double shift_per_cm);

/// Reflects a spectrum about the zero-phonon energy on the energy axis:
/// out(E_zpl + d) = in(E_zpl - d), linearly interpolated and resampled
/// onto the input grid (zero where the reflected point leaves the span).
/// The result keeps the input's axis kind and sample positions. Throws
/// DomainError if zpl_ev lies outside the axis span.
Spectrum mirror_spectrum(const Spectrum& s, double zpl_ev);

/// Huang-Rhys factor of a single effective mode,
/// S = C * dQ^2 * hbar_omega with dQ in amu^(1/2) Angstrom.
double hr_factor_from_dq(double delta_q, double phonon_energy_mev);
/// Inverse of hr_factor_from_dq for the displacement.
double dq_from_hr_factor(double hr_factor, double phonon_energy_mev);
/// Inverse of hr_factor_from_dq for the effective phonon energy.
double phonon_energy_from_hr(double hr_factor, double delta_q);

}  // namespace emlab
