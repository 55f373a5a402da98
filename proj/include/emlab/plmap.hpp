#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "emlab/emitter_sim.hpp"

namespace emlab {

/// Raster of photoluminescence counts. Pixel (ix, iy) is centred at
/// origin + (ix, iy) * pixel_size; storage is row-major in iy.
struct PLMap {
  std::size_t nx = 0;
  std::size_t ny = 0;
  double pixel_size_um = 0.1;
  PositionUm origin_um;
  double excitation_wavelength_nm = 530.0;
  double normalization = 1.0;  // reference maximum for display scaling
  std::vector<double> pixels;

  double at(std::size_t ix, std::size_t iy) const { return pixels[iy * nx + ix]; }
  PositionUm pixel_center(std::size_t ix, std::size_t iy) const {
    return {origin_um.x + static_cast<double>(ix) * pixel_size_um,
            origin_um.y + static_cast<double>(iy) * pixel_size_um};
  }
  double total() const;
};

void check(const PLMap& m);

/// Symmetric 2D Gaussian point-spread function.
struct PSFModel {
  double fwhm_um = 0.4;
  double sigma_um() const;
};

struct MapGrid {
  std::size_t nx = 100;
  std::size_t ny = 100;
  double pixel_size_um = 0.1;
  PositionUm origin_um;
};

struct MapSource {
  PositionUm position_um;
  double rate_hz = 0.0;
};

/// Expected counts per pixel: (background + sum of rate times the PSF
/// integrated over the pixel area) * exposure.
PLMap expected_plmap(std::span<const MapSource> sources, const PSFModel& psf, const MapGrid& grid,
                     double exposure_s, double background_hz_per_pixel = 0.0);

/// Poisson-sampled map; one RNG stream per row so the result does not
/// depend on `threads`. Throws DomainError if a source lies outside the grid.
PLMap render_plmap(std::span<const MapSource> sources, const PSFModel& psf, const MapGrid& grid,
                   double exposure_s, std::uint64_t seed, double background_hz_per_pixel = 0.0,
                   unsigned threads = 1);

/// Sets every map's normalization to the maximum of the 375 nm map (or the
/// first map when none was taken at 375 nm).
void normalize_map_set(std::span<PLMap> maps);

struct DetectOptions {
  double threshold_sigma = 5.0;
  double psf_fwhm_um = 0.4;
  /// A candidate is kept only if its 8-neighbour excess reaches this
  /// fraction of what the PSF predicts; rejects single-pixel artifacts.
  double psf_consistency = 0.5;
};

struct Detection {
  PositionUm position_um;
  double peak_counts = 0.0;
};

struct BackgroundEstimate {
  double mean = 0.0;
  double sigma = 1.0;
};

/// Median and MAD-derived width of all pixels, with a Poisson floor
/// sigma >= sqrt(max(median, 1)).
BackgroundEstimate estimate_background(const PLMap& map);

/// Local maxima above background mean + threshold_sigma * sigma, refined by
/// a background-subtracted centroid over a PSF-sized window. Sorted by
/// peak intensity, brightest first.
std::vector<Detection> detect_emitters(const PLMap& map, const DetectOptions& options = {});

struct SpotIntegral {
  double brightness_counts = 0.0;
  double background_per_pixel = 0.0;
  std::size_t box_pixels = 0;
  bool blended = false;
};

/// Sum over the pixels whose centres lie in a box of side box_um about
/// `center`, minus the median of the surrounding square annulus (width
/// annulus_um, default box_um / 2) times the box pixel count. `blended` is
/// set if any entry of `detections` other than the spot itself (more than
/// half a pixel away) falls inside the box. Throws OutOfBounds if the box
/// leaves the map.
SpotIntegral integrate_spot(const PLMap& map, PositionUm center, double box_um,
                            std::span<const Detection> detections = {},
                            std::optional<double> annulus_um = std::nullopt);

// ---------------------------------------------------------------------------
// Ensemble statistics

struct EmitterRecord {
  PositionUm position_um;
  std::optional<double> g2_zero;
  std::optional<double> lifetime_ns;
  std::optional<double> brightness_hz;
  std::optional<double> peak_wavelength_nm;
  std::optional<double> fwhm_nm;
};

enum class Quantity { G2Zero, Lifetime, Brightness, PeakWavelength, Fwhm };
const char* to_string(Quantity q);
Quantity quantity_from_string(std::string_view name);

struct EnsembleStats {
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1) standard deviation; 0 for n = 1
  std::size_t n = 0;
};

/// Histogram, mean and sample standard deviation of one quantity over the
/// records that carry it. Lifetime uses only records with g2(0) <= 0.5.
/// Values outside the edges are counted in the first or last bin. Throws
/// EmptySelection if nothing is left.
EnsembleStats aggregate_stats(std::span<const EmitterRecord> records, Quantity quantity,
                              std::span<const double> bin_edges);

struct Stability {
  double mean_hz = 0.0;
  double std_hz = 0.0;
  double relative_percent = 0.0;
};

/// Mean, sample standard deviation and 100 * std / mean of a binned trace.
Stability stability_metric(std::span<const double> counts, double interval_s = 1.0);

/// Counts per interval over the full intervals of a stream.
std::vector<double> bin_timetrace(const TimeTagStream& s, double interval_s);

// ---------------------------------------------------------------------------
// Files

enum class RasterFormat { Csv, Float32 };

/// Writes the raster and a JSON sidecar `<path>.json` with geometry.
void write_plmap(const PLMap& map, const std::filesystem::path& path, RasterFormat format);
PLMap read_plmap(const std::filesystem::path& path);

void write_records_csv(std::span<const EmitterRecord> records, std::ostream& out);
std::vector<EmitterRecord> read_records_csv(std::istream& in);

}  // namespace emlab
