#pragma once

#include <optional>
#include <vector>

#include "emlab/spectrum.hpp"

namespace emlab {

/// One effective phonon mode coupled to an optical transition. Give either
/// hr_factor or delta_q; the other follows from the phonon energy.
struct VibronicModel {
  double e_zpl_ev = 2.156;
  std::optional<double> hr_factor;
  std::optional<double> delta_q;  // amu^(1/2) Angstrom
  double phonon_energy_mev = 41.5;
  double broadening_mev = 5.0;  // Gaussian standard deviation per line
};

/// Throws ConfigError unless exactly one of hr_factor / delta_q is set and
/// the energies are positive.
void check(const VibronicModel& m);
double resolved_hr_factor(const VibronicModel& m);

/// Partial Huang-Rhys factors S(hbar omega) on a phonon energy grid.
struct SpectralDensity {
  std::vector<double> phonon_energies_mev;
  std::vector<double> partial_hr;

  double total() const;
};

void check(const SpectralDensity& d);

/// Energy samples E_zpl + k * step for k = -ceil(below / step) ..
/// ceil(above / step); the zero-phonon energy is always a sample.
struct EnergyGrid {
  double step_mev = 0.5;
  double below_zpl_mev = 600.0;
  double above_zpl_mev = 50.0;
};

std::vector<double> grid_axis_ev(double e_zpl_ev, const EnergyGrid& grid);

struct PhononLine {
  double energy_ev;
  double weight;
};

struct Lineshape {
  Spectrum spectrum;  // energy axis (eV, ascending), intensity per eV
  std::vector<PhononLine> lines;
  double zpl_weight = 0.0;     // Debye-Waller factor
  double captured_mass = 0.0;  // sum of line weights
};

/// T = 0 Franck-Condon progression e^-S S^n / n! at E_zpl - n hbar omega,
/// n = 0..n_max, each line Gaussian-broadened. Throws TruncationError if
/// the lines carry less than 1 - 1e-9 of the probability.
Lineshape fc_lineshape(const VibronicModel& model, int n_max,
                       const std::optional<EnergyGrid>& grid = std::nullopt);

/// Emission lineshape from a phonon spectral density by the generating
/// function method: the stick spectrum is the inverse Fourier transform of
/// exp(sum_k S_k e^{-i omega_k t} - S_tot), evaluated with an FFT on the
/// grid spacing, then Gaussian-broadened in the time domain. Modes that do
/// not fall on the grid are split linearly between the neighbouring grid
/// points. Throws GridError when the step does not resolve the broadening
/// or when more than 1e-9 of the probability falls beyond the grid.
Lineshape psb_from_spectral_density(const SpectralDensity& density, double e_zpl_ev,
                                    const EnergyGrid& grid, double broadening_mev);

}  // namespace emlab
