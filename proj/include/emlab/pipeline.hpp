#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emlab/correlate.hpp"
#include "emlab/emitter_sim.hpp"
#include "emlab/fit.hpp"
#include "emlab/plmap.hpp"

namespace emlab {

/// Everything a pipeline run depends on. Parsed from JSON; unknown keys
/// are rejected.
struct Scenario {
  std::string name = "unnamed";
  std::uint64_t seed = 1;
  unsigned threads = 1;

  // Per-emitter template. Lifetime and peak wavelength are drawn per
  // emitter from normal distributions with the given spreads.
  EmitterModel emitter;
  double lifetime_spread_ns = 0.0;
  double wavelength_spread_nm = 0.0;

  // Shared detector settings.
  double rep_rate_mhz = 20.0;
  double irf_sigma_ps = 100.0;
  double dark_rate_hz = 0.0;
  double laser_wavelength_nm = 530.0;

  struct Spots {
    std::size_t nx = 0;
    std::size_t ny = 0;
    double pitch_um = 3.0;
    double jitter_um = 0.0;          // uniform +- jitter of each spot centre
    double cluster_sigma_um = 0.03;  // scatter of emitters inside a spot
    double mean_emitters = 1.0;      // Poisson lambda
    // If set, lambda = lambda_max (1 - exp(-dwell / t0)).
    std::optional<double> dose_dwell_s;
    double dose_lambda_max = 1.0;
    double dose_t0_s = 1.0;
  } spots;

  struct Map {
    double pixel_um = 0.1;
    double psf_fwhm_um = 0.4;
    double margin_um = 2.0;
    double power_uw = 114.0;
    double exposure_s = 1.0;
    double background_hz_per_pixel = 0.0;
    double threshold_sigma = 5.0;
    double box_fwhm = 3.0;  // integration box side in PSF FWHM
  } map;

  struct Hbt {
    double power_uw = 114.0;
    double duration_s = 10.0;
    double background_rate_hz = 0.0;
    double transmittance = 0.5;
    std::int64_t bin_ps = 256;
    int side_peaks = 10;
  } hbt;

  struct Lifetime {
    std::int64_t bin_ps = 100;
    std::uint64_t phase_offset_ps = 5000;
    LifetimeMode mode = LifetimeMode::Convolved;
  } lifetime;

  struct Spectra {
    double min_nm = 550.0;  // long-pass edge
    double max_nm = 650.0;
    double step_nm = 0.25;
    double peak_counts = 500.0;  // per emitter
  } spectra;

  struct Saturation {
    std::vector<double> powers_uw;
    double duration_s = 10.0;
  } saturation;

  struct StabilityStage {
    double power_uw = 114.0;
    double duration_s = 0.0;  // 0 skips the stage
    double interval_s = 1.0;
  } stability;

  std::size_t histogram_bins = 20;
  bool write_all_timetags = false;
};

/// Throws ConfigError on malformed JSON, unknown keys or invalid values.
Scenario parse_scenario(std::string_view json_text);
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& s);
void check(const Scenario& s);

struct SpotTruth {
  PositionUm center_um;
  std::vector<EmitterModel> emitters;
};

/// Analysis of one detected spot.
struct SpotResult {
  Detection detection;
  SpotIntegral integral;
  std::optional<std::size_t> truth_index;  // generating spot within one PSF FWHM
  std::size_t true_emitters = 0;
  std::optional<G2Result> g2;
  std::optional<EmitterClass> emitter_class;
  std::optional<FitResult> lifetime;
  std::optional<FitResult> spectrum;
  EmitterRecord record;
  std::vector<std::string> errors;  // per-stage failures that did not stop the run
};

struct PipelineReport {
  Scenario scenario;
  std::vector<SpotTruth> truth;
  std::vector<SpotResult> spots;
  std::size_t occupied_spots = 0;
  std::size_t occupied_detected = 0;
  std::size_t false_detections = 0;
  std::optional<FitResult> saturation;
  std::optional<Stability> stability;
  std::map<Quantity, EnsembleStats> stats;
  std::string summary;
};

struct PipelineOptions {
  std::vector<std::filesystem::path> inputs;  // recorded in the manifest
  std::string parameters_json;                // defaults to the scenario
};

/// Runs the whole workflow and writes its outputs below `out_dir`:
/// manifest.json, summary.txt, scenario.json, plmap.csv(+.json),
/// detections.csv, records.csv, spots.json, stats.json, g2/, decay/,
/// saturation.csv, saturation_fit.json, timetrace.csv, stability.json and
/// timetags/. On failure the manifest records the failing stage, outputs
/// written so far are kept, and the exception is rethrown.
PipelineReport run_pipeline(const Scenario& scenario, const std::filesystem::path& out_dir,
                            const PipelineOptions& options = {});

/// Ground-truth layout of the spot array (deterministic in the seed).
std::vector<SpotTruth> generate_spots(const Scenario& s);

}  // namespace emlab
