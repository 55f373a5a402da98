#include "emlab/lineshape.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

#include "emlab/errors.hpp"
#include "emlab/spectro.hpp"

namespace emlab {

namespace {

constexpr double kMassTolerance = 1e-9;

// FFTW planning is not thread-safe; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

void fft_inplace(std::vector<std::complex<double>>& data, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  Plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan.reset(fftw_plan_dft_1d(static_cast<int>(data.size()), buf, buf, sign, FFTW_ESTIMATE));
  }
  fftw_execute(plan.get());
}

double gaussian(double x, double sigma) {
  return std::exp(-0.5 * x * x / (sigma * sigma)) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct GridIndex {
  long below;  // samples below the zero-phonon line
  long above;
  double step_ev;
};

GridIndex index_grid(const EnergyGrid& g) {
  if (!(g.step_mev > 0.0) || !(g.below_zpl_mev >= 0.0) || !(g.above_zpl_mev >= 0.0))
    throw GridError("energy grid: step must be > 0 and spans >= 0");
  return {static_cast<long>(std::ceil(g.below_zpl_mev / g.step_mev - 1e-9)),
          static_cast<long>(std::ceil(g.above_zpl_mev / g.step_mev - 1e-9)), g.step_mev * 1e-3};
}

}  // namespace

void check(const VibronicModel& m) {
  if (!(m.e_zpl_ev > 0.0)) throw ConfigError("vibronic model: e_zpl_ev must be > 0");
  if (!(m.phonon_energy_mev > 0.0)) throw ConfigError("vibronic model: phonon_energy_mev must be > 0");
  if (m.hr_factor.has_value() == m.delta_q.has_value())
    throw ConfigError("vibronic model: give exactly one of hr_factor and delta_q");
  if (m.hr_factor && !(*m.hr_factor >= 0.0)) throw ConfigError("vibronic model: hr_factor must be >= 0");
  if (m.delta_q && !(*m.delta_q >= 0.0)) throw ConfigError("vibronic model: delta_q must be >= 0");
  if (!(m.broadening_mev > 0.0)) throw ConfigError("vibronic model: broadening_mev must be > 0");
}

double resolved_hr_factor(const VibronicModel& m) {
  check(m);
  return m.hr_factor ? *m.hr_factor : hr_factor_from_dq(*m.delta_q, m.phonon_energy_mev);
}

double SpectralDensity::total() const {
  double s = 0.0;
  for (double v : partial_hr) s += v;
  return s;
}

void check(const SpectralDensity& d) {
  if (d.phonon_energies_mev.size() != d.partial_hr.size())
    throw ConfigError("spectral density: energy and S arrays differ in length");
  for (std::size_t i = 0; i < d.partial_hr.size(); ++i) {
    if (!(d.phonon_energies_mev[i] >= 0.0) || !std::isfinite(d.phonon_energies_mev[i]))
      throw ConfigError("spectral density: phonon energies must be finite and >= 0");
    if (!(d.partial_hr[i] >= 0.0) || !std::isfinite(d.partial_hr[i]))
      throw ConfigError("spectral density: partial S must be finite and >= 0");
  }
}

std::vector<double> grid_axis_ev(double e_zpl_ev, const EnergyGrid& grid) {
  const auto g = index_grid(grid);
  std::vector<double> axis;
  axis.reserve(static_cast<std::size_t>(g.below + g.above + 1));
  for (long k = -g.below; k <= g.above; ++k) axis.push_back(e_zpl_ev + static_cast<double>(k) * g.step_ev);
  return axis;
}

Lineshape fc_lineshape(const VibronicModel& model, int n_max, const std::optional<EnergyGrid>& grid) {
  const double S = resolved_hr_factor(model);
  if (n_max < 0) throw DomainError("fc_lineshape: n_max must be >= 0");
  const double hw = model.phonon_energy_mev * 1e-3;
  const double sigma = model.broadening_mev * 1e-3;

  Lineshape ls;
  double w = std::exp(-S);
  for (int n = 0; n <= n_max; ++n) {
    if (n > 0) w *= S / n;
    ls.lines.push_back({model.e_zpl_ev - n * hw, w});
    ls.captured_mass += w;
  }
  ls.zpl_weight = ls.lines.front().weight;
  if (ls.captured_mass < 1.0 - kMassTolerance)
    throw TruncationError("fc_lineshape: n_max too small, captured mass " + std::to_string(ls.captured_mass),
                          ls.captured_mass);

  const EnergyGrid g = grid.value_or(EnergyGrid{model.broadening_mev / 5.0,
                                                n_max * model.phonon_energy_mev + 8.0 * model.broadening_mev,
                                                8.0 * model.broadening_mev});
  ls.spectrum.kind = AxisKind::ElectronVolt;
  ls.spectrum.axis = grid_axis_ev(model.e_zpl_ev, g);
  ls.spectrum.intensity.assign(ls.spectrum.axis.size(), 0.0);
  for (std::size_t i = 0; i < ls.spectrum.axis.size(); ++i) {
    double v = 0.0;
    for (const auto& line : ls.lines) v += line.weight * gaussian(ls.spectrum.axis[i] - line.energy_ev, sigma);
    ls.spectrum.intensity[i] = v;
  }
  return ls;
}

Lineshape psb_from_spectral_density(const SpectralDensity& density, double e_zpl_ev,
                                    const EnergyGrid& grid, double broadening_mev) {
  check(density);
  if (!(e_zpl_ev > 0.0)) throw DomainError("psb_from_spectral_density: e_zpl_ev must be > 0");
  if (!(broadening_mev > 0.0)) throw DomainError("psb_from_spectral_density: broadening must be > 0");
  const auto g = index_grid(grid);
  if (grid.step_mev > broadening_mev)
    throw GridError("psb_from_spectral_density: grid step coarser than the line broadening");

  const std::size_t span = static_cast<std::size_t>(g.below + g.above + 1);
  const std::size_t L = next_pow2(2 * span);

  // Partial S binned onto phonon-energy offsets (in grid steps).
  std::vector<std::complex<double>> work(L, 0.0);
  const double S_tot = density.total();
  for (std::size_t i = 0; i < density.partial_hr.size(); ++i) {
    const double pos = density.phonon_energies_mev[i] / grid.step_mev;
    const auto j = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(j);
    if (j + 1 >= L) throw GridError("psb_from_spectral_density: phonon energy beyond the FFT span");
    work[j] += density.partial_hr[i] * (1.0 - frac);
    if (frac > 0.0) work[j + 1] += density.partial_hr[i] * frac;
  }

  // exp(S(k) - S_tot) with S(k) = sum_j S_j e^{-2 pi i j k / L}.
  fft_inplace(work, FFTW_FORWARD);
  for (auto& v : work) v = std::exp(v - S_tot);
  std::vector<std::complex<double>> sticks = work;
  fft_inplace(sticks, FFTW_BACKWARD);
  for (auto& v : sticks) v /= static_cast<double>(L);

  Lineshape ls;
  ls.zpl_weight = sticks[0].real();
  double beyond = 0.0;
  for (std::size_t m = 0; m < L; ++m) {
    const double p = sticks[m].real();
    if (m > static_cast<std::size_t>(g.below)) {
      beyond += std::abs(p);
      continue;
    }
    if (p > 1e-15) {
      ls.lines.push_back({e_zpl_ev - static_cast<double>(m) * g.step_ev, p});
      ls.captured_mass += p;
    }
  }
  if (beyond > kMassTolerance)
    throw GridError("psb_from_spectral_density: sideband extends beyond the grid (mass " +
                    std::to_string(beyond) + ")");

  // Broadening in the conjugate domain, then back to energy offsets.
  const double sigma_steps = broadening_mev / grid.step_mev;
  for (std::size_t k = 0; k < L; ++k) {
    const double kk = k <= L / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(L);
    const double omega = 2.0 * std::numbers::pi * kk / static_cast<double>(L);
    work[k] *= std::exp(-0.5 * sigma_steps * sigma_steps * omega * omega);
  }
  fft_inplace(work, FFTW_BACKWARD);

  ls.spectrum.kind = AxisKind::ElectronVolt;
  ls.spectrum.axis = grid_axis_ev(e_zpl_ev, grid);
  ls.spectrum.intensity.resize(span);
  const double norm = 1.0 / (static_cast<double>(L) * g.step_ev);
  for (long k = -g.below; k <= g.above; ++k) {
    const std::size_t m = static_cast<std::size_t>((static_cast<long>(L) - k) % static_cast<long>(L));
    ls.spectrum.intensity[static_cast<std::size_t>(k + g.below)] = std::max(0.0, work[m].real() * norm);
  }
  return ls;
}

}  // namespace emlab
