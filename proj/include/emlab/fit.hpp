#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emlab/least_squares.hpp"
#include "emlab/spectrum.hpp"
#include "emlab/timetag.hpp"

namespace emlab {

struct FitParam {
  std::string name;
  double value = 0.0;
  double sigma = 0.0;
};

struct FitResult {
  std::vector<FitParam> params;
  double reduced_chi2 = 0.0;
  int n_iterations = 0;
  bool converged = false;
  double relative_gradient = 0.0;
  std::size_t n_points = 0;

  /// Throws std::out_of_range for an unknown name.
  const FitParam& param(std::string_view name) const;
  double value(std::string_view name) const { return param(name).value; }
  double sigma(std::string_view name) const { return param(name).sigma; }
};

// ---------------------------------------------------------------------------
// Saturation curve  I(P) = I_sat P / (P + P_sat) + I_d

struct SaturationParams {
  double i_sat_hz = 0.0;
  double p_sat_uw = 1.0;
  double i_dark_hz = 0.0;
};

struct SaturationPoint {
  double power_uw = 0.0;
  double rate_hz = 0.0;
};

double saturation_model(double power_uw, const SaturationParams& p);
SaturationParams saturation_params(const FitResult& r);

/// Least-squares fit of the saturation curve. Without weights the 1 sigma
/// errors are scaled by the reduced chi^2; with weights (1 / variance) they
/// are taken as absolute. Throws Underdetermined for fewer than three
/// distinct powers. I_d is held at 0 if the free optimum is negative.
FitResult fit_saturation(std::span<const SaturationPoint> points,
                         std::span<const double> weights = {}, const SolverOptions& options = {});

// ---------------------------------------------------------------------------
// Fluorescence decay

/// Photon counts against delay after the laser pulse.
struct DecayHistogram {
  double bin_width_ps = 16.0;
  double origin_ps = 0.0;  // left edge of bin 0
  std::vector<double> counts;

  double time_ps(std::size_t i) const noexcept {
    return origin_ps + (static_cast<double>(i) + 0.5) * bin_width_ps;
  }
};

/// Histogram of (t + phase_offset) mod T over [0, T). The period must be a
/// multiple of the bin width. A phase offset moves the rising edge away
/// from the period boundary so IRF jitter does not wrap around.
DecayHistogram decay_histogram(const TimeTagStream& s, std::int64_t bin_width_ps,
                               std::uint64_t phase_offset_ps = 0);

enum class LifetimeMode {
  Tail,       // A exp(-(t - t_start) / tau) + B from >= 3 sigma after the peak
  Convolved,  // exponential convolved with a Gaussian IRF (EMG) over all bins
};

/// Exponentially modified Gaussian with unit exponential amplitude:
/// the convolution of H(x) exp(-x / tau) with a unit-area Gaussian of
/// width sigma, evaluated at x = t - t0. sigma = 0 gives the step form.
double emg_shape(double x_ps, double tau_ps, double sigma_ps);

/// Fits (tau_ns, amplitude, t0_ns, baseline) with Poisson weights
/// 1 / max(count, 1). In convolved mode with irf_sigma_ps == 0 the model is
/// the bare exponential, which has a step at t0, so the fit falls back to
/// the tail fit. Throws EmptyData on an all-zero histogram.
FitResult fit_lifetime(const DecayHistogram& h, double irf_sigma_ps, LifetimeMode mode,
                       const SolverOptions& options = {});

/// The least-squares problem behind a convolved-mode fit, in internal
/// parameters (log tau_ps, log amplitude, t0_ps, baseline). Exposed for
/// Jacobian and optimality checks.
LeastSquaresProblem lifetime_problem(const DecayHistogram& h, double irf_sigma_ps);

// ---------------------------------------------------------------------------
// Gaussian spectral peak

/// Fits A exp(-(x - c)^2 / (2 s^2)) + B. Parameters are named after the
/// axis units: center_nm, fwhm_nm, sigma_nm, amplitude, baseline (or the
/// _ev variants). Throws Underdetermined for fewer than 5 samples and
/// NoPeak if the maximum sits at either end of the axis.
FitResult fit_gaussian_peak(const Spectrum& spectrum, const SolverOptions& options = {});

/// Internal parameters (center, log fwhm, amplitude, baseline).
LeastSquaresProblem gaussian_peak_problem(const Spectrum& spectrum);

/// Internal parameters (log I_sat, log P_sat, I_d).
LeastSquaresProblem saturation_problem(std::span<const SaturationPoint> points,
                                       std::span<const double> weights = {});

inline constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

}  // namespace emlab
