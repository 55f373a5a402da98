#include "emlab/spectro.hpp"

#include <cmath>

#include "emlab/constants.hpp"
#include "emlab/errors.hpp"

namespace emlab {

double wavelength_energy_convert(double value, ConvertDirection) {
  // hc / x is an involution, so both directions share the formula.
  if (!(value > 0.0) || !std::isfinite(value))
    throw DomainError("wavelength_energy_convert: value must be positive");
  return constants::hc_ev_nm / value;
}

double raman_shifted_wavelength(double excitation_nm, double shift_per_cm) {
  if (!(excitation_nm > 0.0)) throw DomainError("raman_shifted_wavelength: excitation must be > 0");
  const double excitation_per_cm = 1e7 / excitation_nm;
  const double out_per_cm = excitation_per_cm - shift_per_cm;
  if (!(out_per_cm > 0.0))
    throw DomainError("raman_shifted_wavelength: shift exceeds the excitation wavenumber");
  return 1e7 / out_per_cm;
}

Spectrum mirror_spectrum(const Spectrum& s, double zpl_ev) {
  check(s);
  const Spectrum energy = to_energy_axis(s, Reweighting::None);
  if (energy.size() == 0 || zpl_ev < energy.axis.front() || zpl_ev > energy.axis.back())
    throw DomainError("mirror_spectrum: zero-phonon energy outside the axis span");

  Spectrum out = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double e = s.kind == AxisKind::ElectronVolt ? s.axis[i] : constants::hc_ev_nm / s.axis[i];
    out.intensity[i] = interpolate(energy, 2.0 * zpl_ev - e);
  }
  return out;
}

double hr_factor_from_dq(double delta_q, double phonon_energy_mev) {
  if (!(delta_q >= 0.0) || !(phonon_energy_mev >= 0.0))
    throw DomainError("hr_factor_from_dq: inputs must be >= 0");
  return constants::huang_rhys_coefficient * delta_q * delta_q * phonon_energy_mev * 1e-3;
}

double dq_from_hr_factor(double hr_factor, double phonon_energy_mev) {
  if (!(hr_factor >= 0.0) || !(phonon_energy_mev > 0.0))
    throw DomainError("dq_from_hr_factor: need S >= 0 and phonon energy > 0");
  return std::sqrt(hr_factor / (constants::huang_rhys_coefficient * phonon_energy_mev * 1e-3));
}

double phonon_energy_from_hr(double hr_factor, double delta_q) {
  if (!(hr_factor >= 0.0) || !(delta_q > 0.0))
    throw DomainError("phonon_energy_from_hr: need S >= 0 and dQ > 0");
  return hr_factor / (constants::huang_rhys_coefficient * delta_q * delta_q) * 1e3;
}

}  // namespace emlab
