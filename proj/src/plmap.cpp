#include "emlab/plmap.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <numeric>
#include <random>

#include "emlab/errors.hpp"
#include "emlab/seeding.hpp"

namespace emlab {

namespace {

// Fraction of a 1D Gaussian (centre c, width s) inside [a, b].
double interval_mass(double a, double b, double c, double s) {
  const double k = 1.0 / (std::numbers::sqrt2 * s);
  return 0.5 * (std::erf((b - c) * k) - std::erf((a - c) * k));
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

}  // namespace

double PLMap::total() const { return std::accumulate(pixels.begin(), pixels.end(), 0.0); }

void check(const PLMap& m) {
  if (!(m.pixel_size_um > 0.0)) throw DomainError("plmap: pixel size must be > 0");
  if (m.pixels.size() != m.nx * m.ny) throw DomainError("plmap: pixel count does not match nx * ny");
  for (double v : m.pixels)
    if (!(v >= 0.0)) throw DomainError("plmap: pixels must be >= 0");
}

double PSFModel::sigma_um() const { return fwhm_um / 2.3548200450309493; }

PLMap expected_plmap(std::span<const MapSource> sources, const PSFModel& psf, const MapGrid& grid,
                     double exposure_s, double background_hz_per_pixel) {
  if (!(psf.fwhm_um > 0.0)) throw DomainError("render_plmap: PSF FWHM must be > 0");
  if (!(grid.pixel_size_um > 0.0) || grid.nx == 0 || grid.ny == 0)
    throw DomainError("render_plmap: grid must be non-empty with positive pixel size");
  if (!(exposure_s >= 0.0) || !(background_hz_per_pixel >= 0.0))
    throw DomainError("render_plmap: exposure and background must be >= 0");

  PLMap map;
  map.nx = grid.nx;
  map.ny = grid.ny;
  map.pixel_size_um = grid.pixel_size_um;
  map.origin_um = grid.origin_um;
  map.pixels.assign(grid.nx * grid.ny, background_hz_per_pixel * exposure_s);

  const double h = 0.5 * grid.pixel_size_um;
  const double s = psf.sigma_um();
  const double x_lo = grid.origin_um.x - h;
  const double y_lo = grid.origin_um.y - h;
  const double x_hi = x_lo + static_cast<double>(grid.nx) * grid.pixel_size_um;
  const double y_hi = y_lo + static_cast<double>(grid.ny) * grid.pixel_size_um;

  std::vector<double> fx(grid.nx), fy(grid.ny);
  for (const auto& src : sources) {
    const auto& p = src.position_um;
    if (p.x < x_lo || p.x > x_hi || p.y < y_lo || p.y > y_hi)
      throw DomainError("render_plmap: source outside the map grid");
    if (!(src.rate_hz >= 0.0)) throw DomainError("render_plmap: source rate must be >= 0");
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const double c = grid.origin_um.x + static_cast<double>(i) * grid.pixel_size_um;
      fx[i] = interval_mass(c - h, c + h, p.x, s);
    }
    for (std::size_t j = 0; j < grid.ny; ++j) {
      const double c = grid.origin_um.y + static_cast<double>(j) * grid.pixel_size_um;
      fy[j] = interval_mass(c - h, c + h, p.y, s);
    }
    const double counts = src.rate_hz * exposure_s;
    for (std::size_t j = 0; j < grid.ny; ++j) {
      if (fy[j] < 1e-300) continue;
      for (std::size_t i = 0; i < grid.nx; ++i) map.pixels[j * grid.nx + i] += counts * fx[i] * fy[j];
    }
  }
  return map;
}

PLMap render_plmap(std::span<const MapSource> sources, const PSFModel& psf, const MapGrid& grid,
                   double exposure_s, std::uint64_t seed, double background_hz_per_pixel, unsigned threads) {
  PLMap map = expected_plmap(sources, psf, grid, exposure_s, background_hz_per_pixel);
  const auto sample_rows = [&map, seed](std::size_t first, std::size_t last) {
    for (std::size_t j = first; j < last; ++j) {
      Rng rng(derive_seed(seed, {j}));
      for (std::size_t i = 0; i < map.nx; ++i) {
        double& v = map.pixels[j * map.nx + i];
        v = v > 0.0 ? static_cast<double>(std::poisson_distribution<std::uint64_t>(v)(rng)) : 0.0;
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, map.ny);
  if (workers == 1) {
    sample_rows(0, map.ny);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t block = (map.ny + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, sample_rows, w * block,
                                std::min(map.ny, (w + 1) * block)));
    for (auto& j : jobs) j.get();
  }
  return map;
}

void normalize_map_set(std::span<PLMap> maps) {
  if (maps.empty()) return;
  const PLMap* ref = &maps.front();
  for (const auto& m : maps)
    if (std::abs(m.excitation_wavelength_nm - 375.0) < 0.5) {
      ref = &m;
      break;
    }
  const double peak = ref->pixels.empty() ? 0.0 : *std::max_element(ref->pixels.begin(), ref->pixels.end());
  const double norm = peak > 0.0 ? peak : 1.0;
  for (auto& m : maps) m.normalization = norm;
}

BackgroundEstimate estimate_background(const PLMap& map) {
  BackgroundEstimate bg;
  bg.mean = median(map.pixels);
  std::vector<double> dev(map.pixels.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = std::abs(map.pixels[i] - bg.mean);
  bg.sigma = std::max(1.4826 * median(std::move(dev)), std::sqrt(std::max(bg.mean, 1.0)));
  return bg;
}

std::vector<Detection> detect_emitters(const PLMap& map, const DetectOptions& options) {
  check(map);
  std::vector<Detection> found;
  if (map.nx == 0 || map.ny == 0) return found;
  const auto bg = estimate_background(map);
  const double threshold = bg.mean + options.threshold_sigma * bg.sigma;
  const double fwhm_px = options.psf_fwhm_um / map.pixel_size_um;
  const long r = std::max(1L, std::lround(fwhm_px));

  // Neighbour-to-centre ratio of the pixel-integrated PSF for a centred source.
  const double s_px = fwhm_px / 2.3548200450309493;
  const double f0 = interval_mass(-0.5, 0.5, 0.0, s_px);
  const double f1 = interval_mass(0.5, 1.5, 0.0, s_px);
  const double expected_ratio = (4.0 * f1 * f0 + 4.0 * f1 * f1) / (f0 * f0);

  const long nx = static_cast<long>(map.nx), ny = static_cast<long>(map.ny);
  const auto px = [&](long i, long j) { return map.pixels[static_cast<std::size_t>(j * nx + i)]; };

  for (long j = 0; j < ny; ++j) {
    for (long i = 0; i < nx; ++i) {
      const double v = px(i, j);
      if (v <= threshold) continue;
      bool is_max = true;
      for (long dj = -r; dj <= r && is_max; ++dj)
        for (long di = -r; di <= r; ++di) {
          const long a = i + di, b = j + dj;
          if ((di == 0 && dj == 0) || a < 0 || b < 0 || a >= nx || b >= ny) continue;
          const double u = px(a, b);
          // Ties go to the first pixel in raster order.
          if (u > v || (u == v && (b < j || (b == j && a < i)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;

      double ring = 0.0;
      int ring_n = 0;
      for (long dj = -1; dj <= 1; ++dj)
        for (long di = -1; di <= 1; ++di) {
          const long a = i + di, b = j + dj;
          if ((di == 0 && dj == 0) || a < 0 || b < 0 || a >= nx || b >= ny) continue;
          ring += px(a, b) - bg.mean;
          ++ring_n;
        }
      ring *= 8.0 / std::max(ring_n, 1);
      if (ring < options.psf_consistency * expected_ratio * (v - bg.mean)) continue;

      double wsum = 0.0, xs = 0.0, ys = 0.0;
      for (long dj = -r; dj <= r; ++dj)
        for (long di = -r; di <= r; ++di) {
          const long a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= nx || b >= ny) continue;
          const double w = std::max(px(a, b) - bg.mean, 0.0);
          const auto c = map.pixel_center(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
          wsum += w;
          xs += w * c.x;
          ys += w * c.y;
        }
      found.push_back({{xs / wsum, ys / wsum}, v});
    }
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const Detection& a, const Detection& b) { return a.peak_counts > b.peak_counts; });
  return found;
}

SpotIntegral integrate_spot(const PLMap& map, PositionUm center, double box_um,
                            std::span<const Detection> detections, std::optional<double> annulus_um) {
  check(map);
  if (!(box_um > 0.0)) throw DomainError("integrate_spot: box must be > 0");
  const double half = 0.5 * box_um;
  const double ps = map.pixel_size_um;
  const double x_lo = map.origin_um.x - 0.5 * ps;
  const double y_lo = map.origin_um.y - 0.5 * ps;
  const double x_hi = x_lo + static_cast<double>(map.nx) * ps;
  const double y_hi = y_lo + static_cast<double>(map.ny) * ps;
  if (center.x - half < x_lo || center.x + half > x_hi || center.y - half < y_lo || center.y + half > y_hi)
    throw OutOfBounds("integrate_spot: box leaves the map");
  const double outer = half + annulus_um.value_or(half);

  SpotIntegral out;
  double sum = 0.0;
  std::vector<double> ring;
  for (std::size_t j = 0; j < map.ny; ++j) {
    for (std::size_t i = 0; i < map.nx; ++i) {
      const auto c = map.pixel_center(i, j);
      const double d = std::max(std::abs(c.x - center.x), std::abs(c.y - center.y));
      if (d <= half) {
        sum += map.at(i, j);
        ++out.box_pixels;
      } else if (d <= outer) {
        ring.push_back(map.at(i, j));
      }
    }
  }
  out.background_per_pixel = median(std::move(ring));
  out.brightness_counts = sum - out.background_per_pixel * static_cast<double>(out.box_pixels);
  for (const auto& det : detections) {
    const double dx = det.position_um.x - center.x, dy = det.position_um.y - center.y;
    if (std::hypot(dx, dy) <= 0.5 * ps) continue;
    if (std::abs(dx) <= half && std::abs(dy) <= half) out.blended = true;
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::G2Zero: return "g2_zero";
    case Quantity::Lifetime: return "lifetime_ns";
    case Quantity::Brightness: return "brightness_hz";
    case Quantity::PeakWavelength: return "peak_wavelength_nm";
    case Quantity::Fwhm: return "fwhm_nm";
  }
  return "unknown";
}

Quantity quantity_from_string(std::string_view name) {
  for (auto q : {Quantity::G2Zero, Quantity::Lifetime, Quantity::Brightness, Quantity::PeakWavelength,
                 Quantity::Fwhm})
    if (name == to_string(q)) return q;
  throw ConfigError("unknown quantity: " + std::string(name));
}

EnsembleStats aggregate_stats(std::span<const EmitterRecord> records, Quantity quantity,
                              std::span<const double> bin_edges) {
  if (bin_edges.size() < 2) throw DomainError("aggregate_stats: need at least two bin edges");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1])) throw DomainError("aggregate_stats: edges must increase");

  std::vector<double> values;
  for (const auto& r : records) {
    std::optional<double> v;
    switch (quantity) {
      case Quantity::G2Zero: v = r.g2_zero; break;
      case Quantity::Lifetime:
        if (r.g2_zero && *r.g2_zero <= 0.5) v = r.lifetime_ns;
        break;
      case Quantity::Brightness: v = r.brightness_hz; break;
      case Quantity::PeakWavelength: v = r.peak_wavelength_nm; break;
      case Quantity::Fwhm: v = r.fwhm_nm; break;
    }
    if (v) values.push_back(*v);
  }
  if (values.empty()) throw EmptySelection(std::string("aggregate_stats: no records carry ") + to_string(quantity));

  EnsembleStats st;
  st.edges.assign(bin_edges.begin(), bin_edges.end());
  st.counts.assign(bin_edges.size() - 1, 0);
  st.n = values.size();
  for (double v : values) {
    const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), v);
    const auto k = std::clamp<std::ptrdiff_t>(it - bin_edges.begin() - 1, 0,
                                              static_cast<std::ptrdiff_t>(st.counts.size()) - 1);
    ++st.counts[static_cast<std::size_t>(k)];
  }
  st.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(st.n);
  if (st.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - st.mean) * (v - st.mean);
    st.stddev = std::sqrt(ss / static_cast<double>(st.n - 1));
  }
  return st;
}

Stability stability_metric(std::span<const double> counts, double interval_s) {
  if (counts.size() < 2) throw DomainError("stability_metric: need at least two bins");
  if (!(interval_s > 0.0)) throw DomainError("stability_metric: interval must be > 0");
  const double n = static_cast<double>(counts.size());
  const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / n;
  if (mean == 0.0) throw DegenerateMean("stability_metric: mean count is zero");
  double ss = 0.0;
  for (double c : counts) ss += (c - mean) * (c - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean / interval_s, sd / interval_s, 100.0 * sd / mean};
}

std::vector<double> bin_timetrace(const TimeTagStream& s, double interval_s) {
  if (!(interval_s > 0.0)) throw DomainError("bin_timetrace: interval must be > 0");
  const auto width = static_cast<std::uint64_t>(std::llround(interval_s * 1e12));
  const std::uint64_t n = s.duration_ps() / width;
  std::vector<double> counts(n, 0.0);
  for (const auto& t : s.tags()) {
    const auto k = t.t_ps / width;
    if (k < n) counts[k] += 1.0;
  }
  return counts;
}

}  // namespace emlab
