#include "emlab/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "emlab/constants.hpp"
#include "emlab/errors.hpp"

namespace emlab {

const char* to_string(AxisKind k) {
  return k == AxisKind::Nanometer ? "nm" : "eV";
}

void check(const Spectrum& s) {
  if (s.axis.size() != s.intensity.size())
    throw DomainError("spectrum: axis and intensity sizes differ");
  if (s.axis.size() >= 2) {
    const bool ascending = s.axis[1] > s.axis[0];
    for (std::size_t i = 1; i < s.axis.size(); ++i) {
      if (ascending ? !(s.axis[i] > s.axis[i - 1]) : !(s.axis[i] < s.axis[i - 1]))
        throw DomainError("spectrum: axis must be strictly monotone");
    }
  }
  for (double v : s.intensity)
    if (!std::isfinite(v) || v < 0.0) throw DomainError("spectrum: intensities must be finite and >= 0");
}

double integrate(const Spectrum& s) {
  double area = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i)
    area += 0.5 * (s.intensity[i] + s.intensity[i - 1]) * (s.axis[i] - s.axis[i - 1]);
  return std::abs(area);
}

namespace {

Spectrum convert(const Spectrum& s, AxisKind target, Reweighting mode) {
  for (double x : s.axis)
    if (!(x > 0.0)) throw DomainError("spectrum: axis values must be > 0 to convert units");
  Spectrum out;
  out.kind = target;
  out.axis.resize(s.size());
  out.intensity.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double x = s.axis[i];
    const double y = constants::hc_ev_nm / x;  // the map is its own inverse
    out.axis[i] = y;
    // |dx/dy| = hc / y^2 = x^2 / hc
    out.intensity[i] = mode == Reweighting::Jacobian ? s.intensity[i] * x * x / constants::hc_ev_nm
                                                     : s.intensity[i];
  }
  if (out.size() >= 2 && out.axis.front() > out.axis.back()) {
    std::reverse(out.axis.begin(), out.axis.end());
    std::reverse(out.intensity.begin(), out.intensity.end());
  }
  return out;
}

Spectrum ascending(const Spectrum& s) {
  Spectrum out = s;
  if (out.size() >= 2 && out.axis.front() > out.axis.back()) {
    std::reverse(out.axis.begin(), out.axis.end());
    std::reverse(out.intensity.begin(), out.intensity.end());
  }
  return out;
}

}  // namespace

Spectrum to_energy_axis(const Spectrum& s, Reweighting mode) {
  if (s.kind == AxisKind::ElectronVolt) return ascending(s);
  return convert(s, AxisKind::ElectronVolt, mode);
}

Spectrum to_wavelength_axis(const Spectrum& s, Reweighting mode) {
  if (s.kind == AxisKind::Nanometer) return ascending(s);
  return convert(s, AxisKind::Nanometer, mode);
}

double interpolate(const Spectrum& s, double x) {
  const std::size_t n = s.size();
  if (n == 0) return 0.0;
  const bool asc = n < 2 || s.axis[1] > s.axis[0];
  const double lo = asc ? s.axis.front() : s.axis.back();
  const double hi = asc ? s.axis.back() : s.axis.front();
  if (x < lo || x > hi) return 0.0;
  if (n == 1) return s.intensity[0];
  std::size_t j;
  if (asc) {
    j = static_cast<std::size_t>(std::upper_bound(s.axis.begin(), s.axis.end(), x) - s.axis.begin());
  } else {
    j = static_cast<std::size_t>(
        std::upper_bound(s.axis.begin(), s.axis.end(), x, std::greater<>()) - s.axis.begin());
  }
  j = std::clamp<std::size_t>(j, 1, n - 1);
  const double x0 = s.axis[j - 1], x1 = s.axis[j];
  const double w = (x - x0) / (x1 - x0);
  return (1.0 - w) * s.intensity[j - 1] + w * s.intensity[j];
}

void write_csv(const Spectrum& s, std::ostream& out) {
  out << (s.kind == AxisKind::Nanometer ? "wavelength_nm" : "energy_ev") << ",intensity\n";
  out.precision(17);
  for (std::size_t i = 0; i < s.size(); ++i) out << s.axis[i] << ',' << s.intensity[i] << '\n';
}

Spectrum read_spectrum_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("spectrum CSV: missing units header");
  Spectrum s;
  if (line.rfind("wavelength_nm", 0) == 0)
    s.kind = AxisKind::Nanometer;
  else if (line.rfind("energy_ev", 0) == 0)
    s.kind = AxisKind::ElectronVolt;
  else
    throw FormatError("spectrum CSV: header must start with wavelength_nm or energy_ev");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    double x = 0.0, y = 0.0;
    char comma = 0;
    if (!(row >> x >> comma >> y) || comma != ',')
      throw FormatError("spectrum CSV: malformed line " + std::to_string(lineno));
    s.axis.push_back(x);
    s.intensity.push_back(y);
  }
  check(s);
  return s;
}

}  // namespace emlab
