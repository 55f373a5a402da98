#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "emlab/errors.hpp"
#include "emlab/plmap.hpp"

using namespace emlab;

namespace {

MapGrid grid(std::size_t n, double px = 0.1) {
  MapGrid g;
  g.nx = n;
  g.ny = n;
  g.pixel_size_um = px;
  return g;
}

double distance(PositionUm a, PositionUm b) { return std::hypot(a.x - b.x, a.y - b.y); }

// 9 x 7 array on a 3 um pitch, nudged off the pixel lattice.
std::vector<MapSource> array63(double rate) {
  std::vector<MapSource> out;
  std::mt19937_64 rng(63);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (int j = 0; j < 7; ++j)
    for (int i = 0; i < 9; ++i)
      out.push_back({{2.0 + 3.0 * i + jitter(rng), 2.0 + 3.0 * j + jitter(rng)}, rate * (1.0 + 0.1 * (i % 3))});
  return out;
}

}  // namespace

TEST_CASE("PSF sigma from FWHM") {
  CHECK(PSFModel{0.4}.sigma_um() == doctest::Approx(0.4 / (2.0 * std::sqrt(2.0 * std::log(2.0)))));
}

TEST_CASE("render: empty scene is all zero") {
  const auto m = render_plmap({}, {}, grid(20), 1.0, 1);
  CHECK(m.pixels.size() == 400);
  CHECK(m.total() == 0.0);
}

TEST_CASE("render: one emitter totals rate * exposure") {
  const std::vector<MapSource> src{{{5.03, 4.97}, 2e4}};
  const auto e = expected_plmap(src, {}, grid(100), 1.0);
  CHECK(e.total() == doctest::Approx(2e4).epsilon(1e-9));
  const auto m = render_plmap(src, {}, grid(100), 1.0, 7);
  CHECK(std::abs(m.total() - 2e4) < 5.0 * std::sqrt(2e4));
  for (double v : m.pixels) CHECK(v == std::floor(v));
}

TEST_CASE("render: deterministic and independent of thread count") {
  const auto src = array63(1e3);
  const auto g = grid(300);
  const auto a = render_plmap(src, {}, g, 1.0, 11, 2.0, 1);
  CHECK(render_plmap(src, {}, g, 1.0, 11, 2.0, 4).pixels == a.pixels);
  CHECK(render_plmap(src, {}, g, 1.0, 12, 2.0, 1).pixels != a.pixels);
}

TEST_CASE("render: source outside the grid is rejected") {
  const std::vector<MapSource> src{{{50.0, 1.0}, 1.0}};
  CHECK_THROWS_AS(render_plmap(src, {}, grid(10), 1.0, 1), DomainError);
}

TEST_CASE("render: total is linear in exposure") {
  const std::vector<MapSource> src{{{3.0, 3.0}, 1e4}, {{6.0, 6.0}, 5e3}};
  const double a = render_plmap(src, {}, grid(100), 1.0, 3, 0.5).total();
  const double b = render_plmap(src, {}, grid(100), 4.0, 4, 0.5).total();
  const double ratio = b / a;
  const double sigma = ratio * std::sqrt(1.0 / a + 1.0 / b);
  CHECK(std::abs(ratio - 4.0) < 5.0 * sigma);
}

TEST_CASE("two emitters 3 um apart are resolved") {
  const std::vector<MapSource> src{{{3.0, 5.0}, 1e4}, {{6.0, 5.0}, 1e4}};
  const auto m = render_plmap(src, {}, grid(100), 1.0, 5, 1.0);
  const auto d = detect_emitters(m);
  REQUIRE(d.size() == 2);
  for (const auto& s : src) {
    const bool found = distance(d[0].position_um, s.position_um) < 0.2 || distance(d[1].position_um, s.position_um) < 0.2;
    CHECK(found);
  }
}

TEST_CASE("63-emitter array gives 63 detections within fwhm/2") {
  const auto src = array63(2e4);
  const auto m = render_plmap(src, {}, grid(300), 1.0, 17, 5.0, 4);
  const auto d = detect_emitters(m);
  CHECK(d.size() == 63);
  for (const auto& s : src) {
    double best = 1e9;
    for (const auto& x : d) best = std::min(best, distance(x.position_um, s.position_um));
    CHECK(best < 0.2);
  }
  for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i - 1].peak_counts >= d[i].peak_counts);
}

TEST_CASE("flat noise map: no detections at 5 sigma in at least 99 of 100 seeds") {
  int clean = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto m = render_plmap({}, {}, grid(100), 1.0, seed, 20.0);
    clean += detect_emitters(m).empty();
  }
  CHECK(clean >= 99);
}

TEST_CASE("a single hot pixel fails the PSF consistency check") {
  auto m = render_plmap({}, {}, grid(50), 1.0, 9, 10.0);
  m.pixels[25 * 50 + 25] = 5000.0;
  CHECK(detect_emitters(m).empty());
  // a real spot with the same total is kept
  const std::vector<MapSource> src{{{2.5, 2.5}, 5000.0}};
  CHECK(detect_emitters(render_plmap(src, {}, grid(50), 1.0, 9, 10.0)).size() == 1);
}

TEST_CASE("background estimate") {
  const auto m = render_plmap({}, {}, grid(100), 1.0, 2, 100.0);
  const auto bg = estimate_background(m);
  CHECK(bg.mean == doctest::Approx(100.0).epsilon(0.02));
  CHECK(bg.sigma == doctest::Approx(10.0).epsilon(0.1));
}

TEST_CASE("box of 3 x FWHM captures at least 99% of an isolated spot") {
  const PSFModel psf{0.4};
  for (PositionUm p : {PositionUm{5.0, 5.0}, PositionUm{5.04, 4.97}, PositionUm{5.05, 5.05}}) {
    const std::vector<MapSource> src{{p, 1e6}};
    const auto m = render_plmap(src, psf, grid(100), 1.0, 21);
    const auto s = integrate_spot(m, p, 3.0 * psf.fwhm_um);
    // encircled energy of the square box actually covered by whole pixels
    double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
    for (std::size_t iy = 0; iy < m.ny; ++iy)
      for (std::size_t ix = 0; ix < m.nx; ++ix) {
        const auto c = m.pixel_center(ix, iy);
        if (std::abs(c.x - p.x) <= 0.6 && std::abs(c.y - p.y) <= 0.6) {
          lo_x = std::min(lo_x, c.x - 0.05), hi_x = std::max(hi_x, c.x + 0.05);
          lo_y = std::min(lo_y, c.y - 0.05), hi_y = std::max(hi_y, c.y + 0.05);
        }
      }
    const double sq = psf.sigma_um() * std::sqrt(2.0);
    const double frac = 0.25 * (std::erf((hi_x - p.x) / sq) - std::erf((lo_x - p.x) / sq)) *
                        (std::erf((hi_y - p.y) / sq) - std::erf((lo_y - p.y) / sq));
    CHECK(frac >= 0.99);
    CHECK(s.brightness_counts / 1e6 >= 0.99);
    CHECK(std::abs(s.brightness_counts - frac * 1e6) < 5.0 * std::sqrt(1e6));
    CHECK_FALSE(s.blended);
  }
}

TEST_CASE("empty region integrates to zero within noise") {
  const auto m = render_plmap({}, {}, grid(60), 1.0, 8, 50.0);
  const auto s = integrate_spot(m, {3.0, 3.0}, 1.2);
  CHECK(s.box_pixels == 144);
  CHECK(std::abs(s.brightness_counts) < 5.0 * std::sqrt(50.0 * 144.0) + 50.0 * 144.0 * 0.05);
}

TEST_CASE("blended flag and bounds") {
  const std::vector<MapSource> src{{{4.0, 4.0}, 1e4}, {{4.35, 4.0}, 1e4}};
  const auto m = render_plmap(src, {}, grid(80), 1.0, 13, 1.0);
  std::vector<Detection> det{{{4.0, 4.0}, 1.0}, {{4.35, 4.0}, 1.0}};
  CHECK(integrate_spot(m, {4.0, 4.0}, 1.2, det).blended);
  std::vector<Detection> far{{{4.0, 4.0}, 1.0}, {{7.0, 4.0}, 1.0}};
  CHECK_FALSE(integrate_spot(m, {4.0, 4.0}, 1.2, far).blended);
  CHECK_THROWS_AS(integrate_spot(m, {0.3, 4.0}, 1.2), OutOfBounds);
  CHECK_THROWS_AS(integrate_spot(m, {4.0, 7.8}, 1.2), OutOfBounds);
}

TEST_CASE("detect then integrate recovers each rate within 10%") {
  const auto src = array63(2e4);
  const double exposure = 1.0;
  const auto m = render_plmap(src, {}, grid(300), exposure, 19, 3.0);
  const auto d = detect_emitters(m);
  REQUIRE(d.size() == src.size());
  for (const auto& s : src) {
    std::size_t k = 0;
    for (std::size_t i = 1; i < d.size(); ++i)
      if (distance(d[i].position_um, s.position_um) < distance(d[k].position_um, s.position_um)) k = i;
    const auto spot = integrate_spot(m, d[k].position_um, 1.2, d);
    CHECK(spot.brightness_counts / exposure == doctest::Approx(s.rate_hz).epsilon(0.1));
  }
}

TEST_CASE("map set normalization uses the 375 nm map") {
  std::vector<PLMap> maps(3);
  for (std::size_t i = 0; i < 3; ++i) {
    maps[i].nx = maps[i].ny = 2;
    maps[i].pixels = {1.0, 2.0, 3.0, 4.0 * static_cast<double>(i + 1)};
  }
  maps[0].excitation_wavelength_nm = 530;
  maps[1].excitation_wavelength_nm = 375;
  maps[2].excitation_wavelength_nm = 405;
  normalize_map_set(maps);
  for (const auto& m : maps) CHECK(m.normalization == 8.0);
  maps[1].excitation_wavelength_nm = 470;
  normalize_map_set(maps);
  for (const auto& m : maps) CHECK(m.normalization == 4.0);
}

TEST_CASE("aggregate stats") {
  SUBCASE("hand arithmetic") {
    std::vector<EmitterRecord> r(2);
    r[0].brightness_hz = 2.0;
    r[1].brightness_hz = 4.0;
    const std::vector<double> edges{0, 1, 2, 3, 4, 5};
    const auto s = aggregate_stats(r, Quantity::Brightness, edges);
    CHECK(s.mean == 3.0);
    CHECK(s.stddev == doctest::Approx(std::sqrt(2.0)));
    CHECK(s.n == 2);
    CHECK(s.counts == std::vector<std::uint64_t>{0, 0, 1, 0, 1});
  }
  SUBCASE("single record") {
    std::vector<EmitterRecord> r(1);
    r[0].peak_wavelength_nm = 575.0;
    const std::vector<double> edges{550, 600};
    const auto s = aggregate_stats(r, Quantity::PeakWavelength, edges);
    CHECK(s.stddev == 0.0);
    CHECK(s.mean == 575.0);
  }
  SUBCASE("lifetime keeps only g2 <= 0.5 and counts sum to n") {
    std::mt19937_64 rng(38);
    std::normal_distribution<double> tau(3.8, 0.5);
    std::vector<EmitterRecord> r;
    for (int i = 0; i < 63; ++i) {
      EmitterRecord e;
      e.g2_zero = 0.2;
      e.lifetime_ns = tau(rng);
      r.push_back(e);
    }
    for (int i = 0; i < 10; ++i) {
      EmitterRecord e;
      e.g2_zero = i < 5 ? 0.7 : 1.3;
      e.lifetime_ns = 20.0;
      r.push_back(e);
    }
    r.push_back({});  // no lifetime, no g2
    std::vector<double> edges;
    for (int i = 0; i <= 20; ++i) edges.push_back(2.0 + 0.2 * i);
    const auto s = aggregate_stats(r, Quantity::Lifetime, edges);
    CHECK(s.n == 63);
    CHECK(std::accumulate(s.counts.begin(), s.counts.end(), std::uint64_t{0}) == 63);
    CHECK(std::abs(s.mean - 3.8) < 0.2);
    CHECK(std::abs(s.stddev - 0.5) < 0.15);
  }
  SUBCASE("empty selection") {
    std::vector<EmitterRecord> r(3);
    const std::vector<double> edges{0, 1};
    CHECK_THROWS_AS(aggregate_stats(r, Quantity::Fwhm, edges), EmptySelection);
    r[0].g2_zero = 0.9;
    r[0].lifetime_ns = 4.0;
    CHECK_THROWS_AS(aggregate_stats(r, Quantity::Lifetime, edges), EmptySelection);
  }
  SUBCASE("quantity names round-trip") {
    for (auto q : {Quantity::G2Zero, Quantity::Lifetime, Quantity::Brightness, Quantity::PeakWavelength,
                   Quantity::Fwhm})
      CHECK(quantity_from_string(to_string(q)) == q);
    CHECK_THROWS_AS(quantity_from_string("nope"), ConfigError);
  }
}

TEST_CASE("stability metric") {
  const std::vector<double> flat(10, 500.0);
  CHECK(stability_metric(flat).relative_percent == 0.0);
  const double d = 600.0 / std::sqrt(2.0);
  const std::vector<double> two{12'900.0 - d, 12'900.0 + d};
  const auto s = stability_metric(two);
  CHECK(s.mean_hz == doctest::Approx(12'900.0));
  CHECK(s.std_hz == doctest::Approx(600.0));
  CHECK(std::abs(s.relative_percent - 4.65) < 0.005);
  const std::vector<double> halfsec{100.0, 300.0};
  CHECK(stability_metric(halfsec, 0.5).mean_hz == doctest::Approx(400.0));
  CHECK_THROWS_AS(stability_metric(std::vector<double>{1.0}), DomainError);
  CHECK_THROWS_AS(stability_metric(std::vector<double>{0.0, 0.0}), DegenerateMean);
}

TEST_CASE("shot-noise limited trace has relative stability near 100/sqrt(r)") {
  AcquisitionConfig c;
  c.duration_s = 200.0;
  c.dark_rate_hz = 1e4;
  c.seed = 99;
  const auto trace = bin_timetrace(simulate_stream({}, c), 1.0);
  CHECK(trace.size() == 200);
  const auto s = stability_metric(trace);
  // the sample std of 200 bins scatters by ~1/sqrt(2 * 199)
  CHECK(s.relative_percent == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("map files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "emlab_test_plmap";
  std::filesystem::create_directories(dir);
  auto m = render_plmap(array63(1e3), {}, grid(300), 1.0, 1, 1.0);
  m.origin_um = {-1.5, 2.25};
  m.excitation_wavelength_nm = 405;
  m.normalization = 1234.0;
  for (auto fmt : {RasterFormat::Csv, RasterFormat::Float32}) {
    const auto path = dir / (fmt == RasterFormat::Csv ? "map.csv" : "map.f32");
    write_plmap(m, path, fmt);
    const auto back = read_plmap(path);
    CHECK(back.nx == m.nx);
    CHECK(back.ny == m.ny);
    CHECK(back.pixel_size_um == m.pixel_size_um);
    CHECK(back.origin_um.x == m.origin_um.x);
    CHECK(back.origin_um.y == m.origin_um.y);
    CHECK(back.excitation_wavelength_nm == 405);
    CHECK(back.normalization == 1234.0);
    CHECK(back.pixels == m.pixels);  // integer counts survive float32
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("records CSV round-trip keeps missing fields") {
  std::vector<EmitterRecord> r(2);
  r[0].position_um = {1.5, -2.0};
  r[0].g2_zero = 0.224;
  r[0].lifetime_ns = 3.83;
  r[1].position_um = {0.1, 0.2};
  r[1].brightness_hz = 46'880.0;
  r[1].peak_wavelength_nm = 574.83;
  r[1].fwhm_nm = 19.56;
  std::stringstream ss;
  write_records_csv(r, ss);
  const auto back = read_records_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].g2_zero == 0.224);
  CHECK(back[0].lifetime_ns == 3.83);
  CHECK_FALSE(back[0].brightness_hz.has_value());
  CHECK(back[1].fwhm_nm == 19.56);
  CHECK_FALSE(back[1].g2_zero.has_value());
  CHECK(back[1].position_um.y == 0.2);
}
