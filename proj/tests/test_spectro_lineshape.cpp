#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "emlab/constants.hpp"
#include "emlab/errors.hpp"
#include "emlab/lineshape.hpp"
#include "emlab/spectro.hpp"
#include "emlab/spectrum.hpp"

using namespace emlab;

namespace {

constexpr auto kToEv = ConvertDirection::NanometerToElectronVolt;
constexpr auto kToNm = ConvertDirection::ElectronVoltToNanometer;

double poisson_pmf(int n, double S) { return std::exp(-S + n * std::log(S) - std::lgamma(n + 1.0)); }

double normal_pdf(double x, double s) {
  return std::exp(-0.5 * x * x / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
}

double l1_distance(const Spectrum& a, const Spectrum& b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  const double step = a.axis[1] - a.axis[0];
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a.intensity[i] - b.intensity[i]) * step;
  return d;
}

// Spectrum area within half a phonon spacing of the ZPL.
double zpl_area(const Spectrum& s, double e_zpl, double half_width) {
  Spectrum window{s.kind, {}, {}};
  for (std::size_t i = 0; i < s.size(); ++i)
    if (std::abs(s.axis[i] - e_zpl) <= half_width) {
      window.axis.push_back(s.axis[i]);
      window.intensity.push_back(s.intensity[i]);
    }
  return integrate(window);
}

Spectrum energy_gaussian(double center, double sd, double lo, double hi, double step) {
  Spectrum s;
  s.kind = AxisKind::ElectronVolt;
  for (double e = lo; e <= hi + 1e-12; e += step) {
    s.axis.push_back(e);
    s.intensity.push_back(normal_pdf(e - center, sd));
  }
  return s;
}

}  // namespace

TEST_CASE("hc from CODATA h, c, e") {
  // h = 6.62607015e-34 J s, c = 299792458 m/s, e = 1.602176634e-19 C (exact SI)
  const double hc = 6.62607015e-34 * 299792458.0 / 1.602176634e-19 * 1e9;
  CHECK(constants::hc_ev_nm == doctest::Approx(hc).epsilon(1e-12));
  CHECK(constants::hc_ev_nm == doctest::Approx(1239.84198).epsilon(1e-8));
}

TEST_CASE("wavelength and energy conversion") {
  CHECK(wavelength_energy_convert(575.0, kToEv) == doctest::Approx(2.156).epsilon(1e-3));
  CHECK(std::round(wavelength_energy_convert(575.0, kToEv) * 100.0) / 100.0 == 2.16);
  for (double nm : {200.0, 375.0, 530.0, 575.0, 1550.0}) {
    const double back = wavelength_energy_convert(wavelength_energy_convert(nm, kToEv), kToNm);
    CHECK(std::abs(back - nm) <= 1e-12 * nm);
  }
  CHECK_THROWS_AS(wavelength_energy_convert(0.0, kToEv), DomainError);
  CHECK_THROWS_AS(wavelength_energy_convert(-1.0, kToNm), DomainError);
}

TEST_CASE("Raman line placement") {
  CHECK(raman_shifted_wavelength(530.0, 1360.0) == doctest::Approx(571.2).epsilon(1e-4));
  CHECK(std::round(raman_shifted_wavelength(530.0, 1360.0)) == 571.0);
  CHECK(raman_shifted_wavelength(640.0, 1360.0) == doctest::Approx(1e7 / 14265.0));
  CHECK(std::abs(raman_shifted_wavelength(640.0, 1360.0) - 701.0) < 0.05);
  CHECK(raman_shifted_wavelength(530.0, 0.0) == doctest::Approx(530.0).epsilon(1e-14));
  CHECK_THROWS_AS(raman_shifted_wavelength(530.0, 1e7 / 530.0), DomainError);
  CHECK_THROWS_AS(raman_shifted_wavelength(530.0, 30'000.0), DomainError);
  CHECK_THROWS_AS(raman_shifted_wavelength(0.0, 100.0), DomainError);
}

TEST_CASE("mirror spectrum") {
  const double zpl = 2.156;
  SUBCASE("symmetric input is a fixed point") {
    const auto s = energy_gaussian(zpl, 0.02, 2.0, 2.312, 0.001);
    const auto m = mirror_spectrum(s, zpl);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) worst = std::max(worst, std::abs(m.intensity[i] - s.intensity[i]));
    CHECK(worst < 1e-3 * *std::max_element(s.intensity.begin(), s.intensity.end()));
  }
  SUBCASE("a line below the ZPL moves above it") {
    auto s = energy_gaussian(zpl - 0.1, 0.003, 1.9, 2.4, 0.0005);
    const auto m = mirror_spectrum(s, zpl);
    const auto peak = std::max_element(m.intensity.begin(), m.intensity.end()) - m.intensity.begin();
    CHECK(m.axis[static_cast<std::size_t>(peak)] == doctest::Approx(zpl + 0.1).epsilon(1e-6));
  }
  SUBCASE("double mirror is the identity on a 1 meV grid") {
    const auto s = energy_gaussian(zpl - 0.03, 0.015, 2.0, 2.3, 0.001);
    const auto mm = mirror_spectrum(mirror_spectrum(s, zpl + 0.0004), zpl + 0.0004);
    const double peak = *std::max_element(s.intensity.begin(), s.intensity.end());
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.axis[i] > 2.05 && s.axis[i] < 2.25) CHECK(std::abs(mm.intensity[i] - s.intensity[i]) <= 1e-3 * peak);
  }
  SUBCASE("wavelength input mirrors on the energy axis") {
    Spectrum nm;
    nm.kind = AxisKind::Nanometer;
    for (double x = 540.0; x <= 620.0; x += 0.1) {
      nm.axis.push_back(x);
      nm.intensity.push_back(normal_pdf(constants::hc_ev_nm / x - (zpl - 0.05), 0.005));
    }
    const auto m = mirror_spectrum(nm, zpl);
    CHECK(m.kind == AxisKind::Nanometer);
    CHECK(m.axis == nm.axis);
    const auto peak = std::max_element(m.intensity.begin(), m.intensity.end()) - m.intensity.begin();
    CHECK(m.axis[static_cast<std::size_t>(peak)] == doctest::Approx(constants::hc_ev_nm / (zpl + 0.05)).epsilon(2e-4));
  }
  SUBCASE("ZPL outside the span") {
    const auto s = energy_gaussian(2.0, 0.01, 1.9, 2.1, 0.001);
    CHECK_THROWS_AS(mirror_spectrum(s, 2.5), DomainError);
  }
}

TEST_CASE("Huang-Rhys coefficient from an independent unit chain") {
  // m_u c^2 = 931.49410242 MeV, hbar c = 1973.269804 eV Angstrom
  // C = m_u c^2 / (2 (hbar c)^2) per eV amu Angstrom^2
  const double C = 931.49410242e6 / (2.0 * 1973.269804 * 1973.269804);
  CHECK(constants::huang_rhys_coefficient == doctest::Approx(C).epsilon(1e-8));
  CHECK(constants::huang_rhys_coefficient == doctest::Approx(119.6).epsilon(1e-3));
}

TEST_CASE("Huang-Rhys factor and configuration coordinate") {
  CHECK(hr_factor_from_dq(0.0, 41.5) == 0.0);
  const double s1 = hr_factor_from_dq(0.456, 41.5);
  CHECK(hr_factor_from_dq(0.912, 41.5) == doctest::Approx(4.0 * s1).epsilon(1e-14));
  CHECK(phonon_energy_from_hr(1.033, 0.456) == doctest::Approx(41.5).epsilon(2e-3));
  for (double dq : {0.1, 0.456, 1.7})
    for (double hw : {10.0, 41.5, 160.0}) {
      const double S = hr_factor_from_dq(dq, hw);
      CHECK(dq_from_hr_factor(S, hw) == doctest::Approx(dq).epsilon(1e-10));
      CHECK(phonon_energy_from_hr(S, dq) == doctest::Approx(hw).epsilon(1e-10));
    }
}

TEST_CASE("vibronic model validation") {
  VibronicModel m;
  CHECK_THROWS_AS(check(m), ConfigError);  // neither S nor dQ
  m.hr_factor = 1.0;
  m.delta_q = 0.4;
  CHECK_THROWS_AS(check(m), ConfigError);  // both
  m.hr_factor.reset();
  CHECK(resolved_hr_factor(m) == doctest::Approx(hr_factor_from_dq(0.4, m.phonon_energy_mev)));
  m.phonon_energy_mev = 0.0;
  CHECK_THROWS_AS(check(m), ConfigError);
}

TEST_CASE("Franck-Condon lineshape") {
  SUBCASE("S = 0 is a single line at the ZPL") {
    VibronicModel m;
    m.hr_factor = 0.0;
    const auto ls = fc_lineshape(m, 0);
    CHECK(ls.zpl_weight == 1.0);
    const auto peak = std::max_element(ls.spectrum.intensity.begin(), ls.spectrum.intensity.end()) -
                      ls.spectrum.intensity.begin();
    CHECK(ls.spectrum.axis[static_cast<std::size_t>(peak)] == doctest::Approx(m.e_zpl_ev).epsilon(1e-12));
    CHECK(integrate(ls.spectrum) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("Debye-Waller factor for S = 1.033") {
    VibronicModel m;
    m.hr_factor = 1.033;
    const auto ls = fc_lineshape(m, 20);
    CHECK(ls.zpl_weight == doctest::Approx(std::exp(-1.033)).epsilon(1e-14));
    CHECK(ls.zpl_weight == doctest::Approx(0.356).epsilon(1e-3));
    CHECK(integrate(ls.spectrum) == doctest::Approx(1.0).epsilon(1e-6));
    // with a 100 meV mode the ZPL is 10 sigma clear of the first replica
    m.phonon_energy_mev = 100.0;
    const auto wide = fc_lineshape(m, 20);
    CHECK(std::abs(zpl_area(wide.spectrum, m.e_zpl_ev, 0.05) - std::exp(-1.033)) < 1e-4);
    const auto gf = psb_from_spectral_density(SpectralDensity{{100.0}, {1.033}}, m.e_zpl_ev,
                                              EnergyGrid{0.5, 1500.0, 50.0}, 5.0);
    CHECK(std::abs(zpl_area(gf.spectrum, m.e_zpl_ev, 0.05) - std::exp(-1.033)) < 1e-4);
  }
  SUBCASE("S = 4.795 peaks at n = 4") {
    VibronicModel m;
    m.hr_factor = 4.795;
    const auto ls = fc_lineshape(m, 30);
    const auto best = std::max_element(ls.lines.begin(), ls.lines.end(),
                                       [](const auto& a, const auto& b) { return a.weight < b.weight; });
    CHECK(best - ls.lines.begin() == 4);
    for (int n = 0; n <= 30; ++n) CHECK(ls.lines[static_cast<std::size_t>(n)].weight == doctest::Approx(poisson_pmf(n, 4.795)).epsilon(1e-12));
    CHECK(integrate(ls.spectrum) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("insufficient n_max reports the achieved mass") {
    VibronicModel m;
    m.hr_factor = 4.795;
    try {
      (void)fc_lineshape(m, 6);
      FAIL("expected TruncationError");
    } catch (const TruncationError& e) {
      double mass = 0.0;
      for (int n = 0; n <= 6; ++n) mass += poisson_pmf(n, 4.795);
      CHECK(e.achieved_mass() == doctest::Approx(mass).epsilon(1e-12));
    }
  }
  SUBCASE("delta_q input") {
    VibronicModel m;
    m.delta_q = 0.456;
    m.phonon_energy_mev = 41.5;
    const auto ls = fc_lineshape(m, 20);
    CHECK(ls.zpl_weight == doctest::Approx(std::exp(-hr_factor_from_dq(0.456, 41.5))));
  }
}

TEST_CASE("generating function agrees with Franck-Condon for one mode") {
  for (double S : {0.3, 1.033, 1.372, 4.795}) {
    CAPTURE(S);
    VibronicModel m;
    m.hr_factor = S;
    m.phonon_energy_mev = 41.5;
    m.broadening_mev = 5.0;
    const EnergyGrid grid{0.5, 1500.0, 50.0};
    const auto fc = fc_lineshape(m, 40, grid);
    const SpectralDensity d{{41.5}, {S}};
    const auto gf = psb_from_spectral_density(d, m.e_zpl_ev, grid, 5.0);
    CHECK(l1_distance(fc.spectrum, gf.spectrum) < 1e-6);
    CHECK(integrate(gf.spectrum) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(gf.zpl_weight - std::exp(-S)) < 1e-4);
    CHECK(std::abs(fc.zpl_weight - std::exp(-S)) < 1e-4);
  }
}

TEST_CASE("S_tot = 0 gives a delta at the ZPL") {
  const SpectralDensity d{{50.0, 100.0}, {0.0, 0.0}};
  const auto ls = psb_from_spectral_density(d, 2.0, EnergyGrid{0.5, 200.0, 50.0}, 2.0);
  CHECK(ls.zpl_weight == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(ls.lines.size() == 1);
  CHECK(ls.lines[0].energy_ev == 2.0);
  CHECK(integrate(ls.spectrum) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("two-mode sideband matches the brute-force double sum") {
  const double e0 = 2.156;
  const SpectralDensity d{{100.0, 150.0}, {0.5, 0.5}};
  const EnergyGrid grid{0.5, 2500.0, 50.0};
  const auto ls = psb_from_spectral_density(d, e0, grid, 4.0);

  // all outcomes (n1, n2); 12 quanta per mode leave < 1e-10 of the mass
  Spectrum oracle = ls.spectrum;
  std::fill(oracle.intensity.begin(), oracle.intensity.end(), 0.0);
  std::map<int, double> sticks;  // meV below the ZPL -> weight
  for (int n1 = 0; n1 <= 12; ++n1)
    for (int n2 = 0; n2 <= 12; ++n2) {
      const double w = poisson_pmf(n1, 0.5) * poisson_pmf(n2, 0.5);
      const int shift = 100 * n1 + 150 * n2;
      sticks[shift] += w;
      for (std::size_t i = 0; i < oracle.size(); ++i)
        oracle.intensity[i] += w * normal_pdf(oracle.axis[i] - (e0 - shift * 1e-3), 4e-3);
    }
  CHECK(l1_distance(ls.spectrum, oracle) < 1e-6);
  for (int shift : {0, 100, 150, 200, 250}) {
    CAPTURE(shift);
    const auto it = std::find_if(ls.lines.begin(), ls.lines.end(),
                                 [&](const auto& l) { return std::abs(l.energy_ev - (e0 - shift * 1e-3)) < 1e-9; });
    REQUIRE(it != ls.lines.end());
    CHECK(it->weight == doctest::Approx(sticks[shift]).epsilon(1e-9));
  }
}

TEST_CASE("grid errors") {
  const SpectralDensity d{{100.0}, {4.0}};
  CHECK_THROWS_AS(psb_from_spectral_density(d, 2.0, EnergyGrid{5.0, 1500.0, 50.0}, 2.0), GridError);
  CHECK_THROWS_AS(psb_from_spectral_density(d, 2.0, EnergyGrid{0.5, 300.0, 50.0}, 2.0), GridError);
  CHECK_THROWS_AS(psb_from_spectral_density(SpectralDensity{{1.0}, {-1.0}}, 2.0, EnergyGrid{}, 5.0), ConfigError);
}

TEST_CASE("axis conversion") {
  Spectrum s;
  s.kind = AxisKind::Nanometer;
  for (double x = 500.0; x <= 700.0; x += 0.25) {
    s.axis.push_back(x);
    s.intensity.push_back(normal_pdf(x - 575.0, 8.3));
  }
  const auto e = to_energy_axis(s, Reweighting::Jacobian);
  CHECK(e.kind == AxisKind::ElectronVolt);
  CHECK(std::is_sorted(e.axis.begin(), e.axis.end()));
  CHECK(integrate(e) == doctest::Approx(integrate(s)).epsilon(1e-4));
  const auto back = to_wavelength_axis(to_energy_axis(s), Reweighting::None);
  CHECK(back.intensity == s.intensity);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(back.axis[i] == doctest::Approx(s.axis[i]).epsilon(1e-13));
  const auto back_j = to_wavelength_axis(e, Reweighting::Jacobian);
  for (std::size_t i = 0; i < s.size(); ++i)
    CHECK(back_j.intensity[i] == doctest::Approx(s.intensity[i]).epsilon(1e-12));
}

TEST_CASE("spectrum CSV round-trip") {
  Spectrum s{AxisKind::ElectronVolt, {2.0, 2.1, 2.2}, {0.0, 1.5, 0.25}};
  std::stringstream ss;
  write_csv(s, ss);
  CHECK(ss.str().rfind("energy_ev,intensity\n", 0) == 0);
  const auto back = read_spectrum_csv(ss);
  CHECK(back.kind == AxisKind::ElectronVolt);
  CHECK(back.axis == s.axis);
  CHECK(back.intensity == s.intensity);
  std::stringstream bad("foo,bar\n1,2\n");
  CHECK_THROWS_AS(read_spectrum_csv(bad), FormatError);
}
