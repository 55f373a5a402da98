#pragma once

#include <iosfwd>
#include <vector>

namespace emlab {

enum class AxisKind { Nanometer, ElectronVolt };

const char* to_string(AxisKind k);

/// Sampled intensity on a strictly monotone wavelength or energy axis.
struct Spectrum {
  AxisKind kind = AxisKind::Nanometer;
  std::vector<double> axis;
  std::vector<double> intensity;

  std::size_t size() const noexcept { return axis.size(); }
};

/// Throws DomainError unless sizes match, the axis is strictly monotone
/// and every intensity is finite and >= 0.
void check(const Spectrum& s);

/// Trapezoidal integral over the axis (sign-corrected for descending axes).
double integrate(const Spectrum& s);

/// How intensity is treated when the axis is converted between nm and eV.
enum class Reweighting {
  None,      // values copied; exactly reversible
  Jacobian,  // multiplied by |d lambda / d E| (or inverse); preserves area
};

/// Converts to an energy axis in ascending order.
Spectrum to_energy_axis(const Spectrum& s, Reweighting mode = Reweighting::None);
/// Converts to a wavelength axis in ascending order.
Spectrum to_wavelength_axis(const Spectrum& s, Reweighting mode = Reweighting::None);

/// Linear interpolation of intensity at `x`; zero outside the axis span.
double interpolate(const Spectrum& s, double x);

/// Two-column CSV. The first line names the units, e.g. "wavelength_nm,intensity"
/// or "energy_ev,intensity".
void write_csv(const Spectrum& s, std::ostream& out);
Spectrum read_spectrum_csv(std::istream& in);

}  // namespace emlab
