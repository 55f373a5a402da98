#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emlab/timetag.hpp"

namespace emlab {

struct PositionUm {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const PositionUm&, const PositionUm&) = default;
};

/// Two-state telegraph switching of an emitter. Off by default.
struct Blinking {
  bool enabled = false;
  double mean_on_s = 1.0;
  double mean_off_s = 0.1;
};

/// Photophysics of one two-level emitter.
struct EmitterModel {
  double lifetime_ns = 3.83;
  double p_max = 1.0;                 // peak excitation probability per pulse
  double p_sat_uw = 114.0;            // saturation power
  double efficiency = 2.344e-3;       // quantum x collection x detection
  double peak_wavelength_nm = 575.0;
  double fwhm_nm = 19.56;
  PositionUm position_um;
  Blinking blinking;
};

struct AcquisitionConfig {
  double rep_rate_mhz = 20.0;
  double power_uw = 114.0;
  double duration_s = 1.0;
  double irf_sigma_ps = 0.0;
  double dark_rate_hz = 0.0;
  double background_rate_hz = 0.0;
  double laser_wavelength_nm = 530.0;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  std::uint64_t rep_period_ps() const;
  std::uint64_t duration_ps() const;
  AcquisitionMeta meta() const;
};

/// Throws ConfigError on an invalid model or acquisition.
void check(const EmitterModel& m);
void check(const AcquisitionConfig& c);

/// Per-pulse excitation probability p_max * P / (P + P_sat).
double excitation_probability(double power_uw, const EmitterModel& model);

/// Expected detected signal rate (Hz) of one emitter.
double expected_signal_rate_hz(const EmitterModel& model, const AcquisitionConfig& config);

/// Monte Carlo detection stream of a set of emitters plus dark counts and
/// uncorrelated background, all on channel 0. Each emitter emits at most
/// one photon per pulse; the delay after the pulse is Exponential(tau)
/// plus Gaussian IRF jitter. Tags falling outside [0, duration) are lost.
/// The output depends only on the inputs and the seed, not on `threads`.
TimeTagStream simulate_stream(std::span<const EmitterModel> models, const AcquisitionConfig& config);

/// simulate_stream followed by a beamsplitter onto detectors 0 and 1.
TimeTagStream simulate_hbt(std::span<const EmitterModel> models, const AcquisitionConfig& config,
                           double transmittance = 0.5);

/// Poisson(mean_lambda) draw, deterministic per seed.
std::uint64_t sample_emitter_count(double mean_lambda, std::uint64_t seed);

/// Saturating dose response lambda_max * (1 - exp(-t / t0)).
double dose_to_density(double dwell_time_s, double lambda_max, double t0_s);

}  // namespace emlab
