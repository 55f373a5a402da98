#include "emlab/fit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "emlab/errors.hpp"

namespace emlab {

const FitParam& FitResult::param(std::string_view name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw std::out_of_range("FitResult: no parameter named " + std::string(name));
}

namespace {

// Packs the solver report into a FitResult. `to_natural` maps internal to
// reported values and `dnatural` gives the diagonal derivative used to
// carry the internal covariance over.
struct ParamSpec {
  std::string name;
  double natural;
  double dnatural;  // d natural / d internal
};

FitResult finish(const SolverReport& rep, const std::vector<ParamSpec>& specs, bool scale_covariance) {
  FitResult r;
  r.n_points = static_cast<std::size_t>(rep.residuals.size());
  r.n_iterations = rep.iterations;
  r.converged = rep.converged;
  r.relative_gradient = rep.relative_gradient;
  const auto dof = static_cast<double>(rep.residuals.size() - rep.x.size());
  r.reduced_chi2 = dof > 0 ? rep.residuals.squaredNorm() / dof : 0.0;

  Eigen::MatrixXd cov = normal_matrix_inverse(rep.jacobian);
  if (scale_covariance) cov *= r.reduced_chi2;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double var = std::max(0.0, cov(jj, jj));
    r.params.push_back({specs[j].name, specs[j].natural, std::abs(specs[j].dnatural) * std::sqrt(var)});
  }
  return r;
}

std::vector<double> unit_weights(std::size_t n, std::span<const double> weights) {
  if (weights.empty()) return std::vector<double>(n, 1.0);
  if (weights.size() != n) throw DomainError("fit: weights and data sizes differ");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("fit: weights must be finite and >= 0");
  return {weights.begin(), weights.end()};
}

double erfcx(double z) {
  if (z < 25.0) return std::exp(z * z) * std::erfc(z);
  // Asymptotic series; four terms are at double precision beyond z = 25.
  const double iz2 = 1.0 / (z * z);
  return (1.0 - 0.5 * iz2 + 0.75 * iz2 * iz2 - 1.875 * iz2 * iz2 * iz2) /
         (z * std::sqrt(std::numbers::pi));
}

struct EmgTerms {
  double g;     // shape
  double dgdx;  // d g / d x
  double dgdt;  // d g / d tau
};

EmgTerms emg_terms(double x, double tau, double sigma) {
  if (sigma <= 0.0) {
    const double g = x >= 0.0 ? std::exp(-x / tau) : 0.0;
    return {g, -g / tau, g * x / (tau * tau)};
  }
  const double z = (sigma / tau - x / sigma) / std::numbers::sqrt2;
  const double gauss = std::exp(-0.5 * x * x / (sigma * sigma));
  double g;
  if (z < 0.0)
    g = 0.5 * std::exp(0.5 * sigma * sigma / (tau * tau) - x / tau) * std::erfc(z);
  else
    g = 0.5 * gauss * erfcx(z);
  const double phi = gauss / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  return {g, -g / tau + phi,
          g * (x / (tau * tau) - sigma * sigma / (tau * tau * tau)) + phi * sigma * sigma / (tau * tau)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Saturation

double saturation_model(double power_uw, const SaturationParams& p) {
  return p.i_sat_hz * power_uw / (power_uw + p.p_sat_uw) + p.i_dark_hz;
}

SaturationParams saturation_params(const FitResult& r) {
  return {r.value("i_sat_hz"), r.value("p_sat_uw"), r.value("i_dark_hz")};
}

namespace {

LeastSquaresProblem saturation_problem_impl(std::vector<SaturationPoint> pts, std::vector<double> w,
                                            bool dark_fixed) {
  LeastSquaresProblem prob;
  prob.n_params = dark_fixed ? 2 : 3;
  prob.n_residuals = static_cast<Eigen::Index>(pts.size());
  for (auto& v : w) v = std::sqrt(v);
  prob.residuals = [pts, w](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    const double is = std::exp(x[0]), ps = std::exp(x[1]);
    const double id = x.size() > 2 ? x[2] : 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double P = pts[i].power_uw;
      r[static_cast<Eigen::Index>(i)] = w[i] * (pts[i].rate_hz - (is * P / (P + ps) + id));
    }
  };
  prob.jacobian = [pts, w](const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
    const double is = std::exp(x[0]), ps = std::exp(x[1]);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double P = pts[i].power_uw;
      const double frac = P / (P + ps);
      J(ii, 0) = -w[i] * is * frac;
      J(ii, 1) = w[i] * is * frac * ps / (P + ps);
      if (J.cols() > 2) J(ii, 2) = -w[i];
    }
  };
  return prob;
}

}  // namespace

LeastSquaresProblem saturation_problem(std::span<const SaturationPoint> points,
                                       std::span<const double> weights) {
  return saturation_problem_impl({points.begin(), points.end()}, unit_weights(points.size(), weights),
                                 false);
}

FitResult fit_saturation(std::span<const SaturationPoint> points, std::span<const double> weights,
                         const SolverOptions& options) {
  std::vector<SaturationPoint> pts(points.begin(), points.end());
  const auto w = unit_weights(pts.size(), weights);
  for (const auto& p : pts)
    if (!(p.power_uw >= 0.0) || !std::isfinite(p.rate_hz))
      throw DomainError("fit_saturation: powers must be >= 0 and rates finite");

  std::vector<double> powers;
  for (const auto& p : pts) powers.push_back(p.power_uw);
  std::sort(powers.begin(), powers.end());
  if (std::unique(powers.begin(), powers.end()) - powers.begin() < 3)
    throw Underdetermined("fit_saturation: need at least three distinct powers");

  auto sorted = pts;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.power_uw < b.power_uw; });
  double lo = sorted.front().rate_hz, hi = lo, mean = 0.0;
  for (const auto& p : sorted) {
    lo = std::min(lo, p.rate_hz);
    hi = std::max(hi, p.rate_hz);
    mean += p.rate_hz / static_cast<double>(sorted.size());
  }

  // Half-rise power by linear interpolation along increasing power.
  const double half = lo + 0.5 * (hi - lo);
  double p_half = powers[powers.size() / 2];
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const auto& a = sorted[i - 1];
    const auto& b = sorted[i];
    if (a.rate_hz < half && b.rate_hz >= half) {
      p_half = a.power_uw + (half - a.rate_hz) / (b.rate_hz - a.rate_hz) * (b.power_uw - a.power_uw);
      break;
    }
  }
  p_half = std::max(p_half, 1e-6 * std::max(1.0, powers.back()));

  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    FitResult flat;
    flat.params = {{"i_sat_hz", 0.0, 0.0}, {"p_sat_uw", p_half, 0.0}, {"i_dark_hz", mean, 0.0}};
    flat.converged = true;
    flat.n_points = pts.size();
    return flat;
  }

  Eigen::VectorXd x0(3);
  x0 << std::log(2.0 * (hi - lo)), std::log(p_half), lo;
  auto prob = saturation_problem_impl(pts, w, false);
  auto rep = levenberg_marquardt(prob, x0, options);
  const bool scale = weights.empty();

  if (rep.x[2] < 0.0) {
    auto pinned = saturation_problem_impl(pts, w, true);
    auto rep2 = levenberg_marquardt(pinned, rep.x.head(2), options);
    const double is = std::exp(rep2.x[0]), ps = std::exp(rep2.x[1]);
    auto r = finish(rep2, {{"i_sat_hz", is, is}, {"p_sat_uw", ps, ps}}, scale);
    r.params.push_back({"i_dark_hz", 0.0, 0.0});
    return r;
  }
  const double is = std::exp(rep.x[0]), ps = std::exp(rep.x[1]);
  return finish(rep, {{"i_sat_hz", is, is}, {"p_sat_uw", ps, ps}, {"i_dark_hz", rep.x[2], 1.0}}, scale);
}

// ---------------------------------------------------------------------------
// Lifetime

DecayHistogram decay_histogram(const TimeTagStream& s, std::int64_t bin_width_ps,
                               std::uint64_t phase_offset_ps) {
  const std::uint64_t T = s.meta().repetition_period_ps;
  if (bin_width_ps <= 0 || T == 0 || T % static_cast<std::uint64_t>(bin_width_ps) != 0)
    throw DomainError("decay_histogram: bin width must divide the repetition period");
  const auto w = static_cast<std::uint64_t>(bin_width_ps);
  DecayHistogram h;
  h.bin_width_ps = static_cast<double>(bin_width_ps);
  h.origin_ps = 0.0;
  h.counts.assign(T / w, 0.0);
  for (const auto& tag : s.tags()) h.counts[((tag.t_ps + phase_offset_ps) % T) / w] += 1.0;
  return h;
}

double emg_shape(double x_ps, double tau_ps, double sigma_ps) {
  return emg_terms(x_ps, tau_ps, sigma_ps).g;
}

LeastSquaresProblem lifetime_problem(const DecayHistogram& h, double irf_sigma_ps) {
  std::vector<double> t(h.counts.size()), y = h.counts, sw(h.counts.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = h.time_ps(i);
    sw[i] = 1.0 / std::sqrt(std::max(y[i], 1.0));
  }
  LeastSquaresProblem prob;
  prob.n_params = 4;
  prob.n_residuals = static_cast<Eigen::Index>(t.size());
  const double sigma = irf_sigma_ps;
  prob.residuals = [t, y, sw, sigma](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    const double tau = std::exp(x[0]), A = std::exp(x[1]);
    for (std::size_t i = 0; i < t.size(); ++i)
      r[static_cast<Eigen::Index>(i)] = sw[i] * (y[i] - (A * emg_terms(t[i] - x[2], tau, sigma).g + x[3]));
  };
  prob.jacobian = [t, sw, sigma](const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
    const double tau = std::exp(x[0]), A = std::exp(x[1]);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto e = emg_terms(t[i] - x[2], tau, sigma);
      J(ii, 0) = -sw[i] * A * tau * e.dgdt;
      J(ii, 1) = -sw[i] * A * e.g;
      J(ii, 2) = sw[i] * A * e.dgdx;
      J(ii, 3) = -sw[i];
    }
  };
  return prob;
}

namespace {

FitResult fit_tail(const DecayHistogram& h, std::size_t start, double tau0, double baseline0,
                   const SolverOptions& options) {
  std::vector<double> dt, y, sw;
  const double t_start = h.time_ps(start);
  for (std::size_t i = start; i < h.counts.size(); ++i) {
    dt.push_back(h.time_ps(i) - t_start);
    y.push_back(h.counts[i]);
    sw.push_back(1.0 / std::sqrt(std::max(h.counts[i], 1.0)));
  }
  if (dt.size() < 4) throw Underdetermined("fit_lifetime: too few bins after the peak");

  LeastSquaresProblem prob;
  prob.n_params = 3;
  prob.n_residuals = static_cast<Eigen::Index>(dt.size());
  prob.residuals = [dt, y, sw](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    const double tau = std::exp(x[0]), A = std::exp(x[1]);
    for (std::size_t i = 0; i < dt.size(); ++i)
      r[static_cast<Eigen::Index>(i)] = sw[i] * (y[i] - (A * std::exp(-dt[i] / tau) + x[2]));
  };
  prob.jacobian = [dt, sw](const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
    const double tau = std::exp(x[0]), A = std::exp(x[1]);
    for (std::size_t i = 0; i < dt.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double e = A * std::exp(-dt[i] / tau);
      J(ii, 0) = -sw[i] * e * dt[i] / tau;
      J(ii, 1) = -sw[i] * e;
      J(ii, 2) = -sw[i];
    }
  };

  Eigen::VectorXd x0(3);
  x0 << std::log(tau0), std::log(std::max(y.front() - baseline0, 1.0)), baseline0;
  const auto rep = levenberg_marquardt(prob, x0, options);
  const double tau = std::exp(rep.x[0]), A = std::exp(rep.x[1]);
  auto r = finish(rep, {{"tau_ns", tau * 1e-3, tau * 1e-3}, {"amplitude", A, A}, {"baseline", rep.x[2], 1.0}},
                  false);
  r.params.insert(r.params.begin() + 2, {"t0_ns", t_start * 1e-3, 0.0});
  return r;
}

}  // namespace

FitResult fit_lifetime(const DecayHistogram& h, double irf_sigma_ps, LifetimeMode mode,
                       const SolverOptions& options) {
  if (!(irf_sigma_ps >= 0.0)) throw DomainError("fit_lifetime: irf sigma must be >= 0");
  const auto& c = h.counts;
  if (c.empty() || std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; }))
    throw EmptyData("fit_lifetime: histogram is empty");

  std::vector<double> sorted = c;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 10),
                   sorted.end());
  const double baseline0 = sorted[sorted.size() / 10];
  const auto peak = static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
  const double height = std::max(c[peak] - baseline0, 1.0);

  const double noise = 3.0 * std::sqrt(std::max(baseline0, 1.0));
  const auto above = std::count_if(c.begin(), c.end(), [&](double v) { return v > baseline0 + noise; });
  if (above < 10) throw Underdetermined("fit_lifetime: fewer than 10 bins above baseline");

  double area = 0.0;
  for (double v : c) area += std::max(v - baseline0, 0.0);
  const double span = h.bin_width_ps * static_cast<double>(c.size());
  const double tau0 = std::clamp(area * h.bin_width_ps / height, h.bin_width_ps, span);

  if (mode == LifetimeMode::Tail || irf_sigma_ps == 0.0) {
    const auto skip = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(3.0 * irf_sigma_ps / h.bin_width_ps)));
    return fit_tail(h, peak + skip, tau0, baseline0, options);
  }

  Eigen::VectorXd x0(4);
  x0 << std::log(tau0), std::log(height), h.time_ps(peak) - irf_sigma_ps, baseline0;
  const auto rep = levenberg_marquardt(lifetime_problem(h, irf_sigma_ps), x0, options);
  const double tau = std::exp(rep.x[0]), A = std::exp(rep.x[1]);
  return finish(rep,
                {{"tau_ns", tau * 1e-3, tau * 1e-3},
                 {"amplitude", A, A},
                 {"t0_ns", rep.x[2] * 1e-3, 1e-3},
                 {"baseline", rep.x[3], 1.0}},
                false);
}

// ---------------------------------------------------------------------------
// Gaussian peak

LeastSquaresProblem gaussian_peak_problem(const Spectrum& s) {
  std::vector<double> x = s.axis, y = s.intensity;
  LeastSquaresProblem prob;
  prob.n_params = 4;
  prob.n_residuals = static_cast<Eigen::Index>(x.size());
  prob.residuals = [x, y](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    const double sd = std::exp(p[1]) / kFwhmPerSigma;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = (x[i] - p[0]) / sd;
      r[static_cast<Eigen::Index>(i)] = y[i] - (p[2] * std::exp(-0.5 * u * u) + p[3]);
    }
  };
  prob.jacobian = [x](const Eigen::VectorXd& p, Eigen::MatrixXd& J) {
    const double sd = std::exp(p[1]) / kFwhmPerSigma;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double u = (x[i] - p[0]) / sd;
      const double e = std::exp(-0.5 * u * u);
      J(ii, 0) = -p[2] * e * u / sd;
      J(ii, 1) = -p[2] * e * u * u;
      J(ii, 2) = -e;
      J(ii, 3) = -1.0;
    }
  };
  return prob;
}

FitResult fit_gaussian_peak(const Spectrum& s, const SolverOptions& options) {
  check(s);
  const std::size_t n = s.size();
  if (n < 5) throw Underdetermined("fit_gaussian_peak: need at least 5 samples");
  const auto& y = s.intensity;
  const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  if (peak == 0 || peak == n - 1) throw NoPeak("fit_gaussian_peak: no interior maximum");

  const double lo = *std::min_element(y.begin(), y.end());
  const double half = lo + 0.5 * (y[peak] - lo);
  const auto crossing = [&](std::size_t a, std::size_t b) {
    return s.axis[a] + (half - y[a]) / (y[b] - y[a]) * (s.axis[b] - s.axis[a]);
  };
  std::optional<double> left, right;
  for (std::size_t i = peak; i > 0; --i)
    if (y[i - 1] < half) {
      left = crossing(i - 1, i);
      break;
    }
  for (std::size_t i = peak; i + 1 < n; ++i)
    if (y[i + 1] < half) {
      right = crossing(i + 1, i);
      break;
    }
  const double c0 = s.axis[peak];
  double fwhm0 = std::abs(s.axis.back() - s.axis.front()) / 4.0;
  if (left && right)
    fwhm0 = std::abs(*right - *left);
  else if (left)
    fwhm0 = 2.0 * std::abs(c0 - *left);
  else if (right)
    fwhm0 = 2.0 * std::abs(*right - c0);

  Eigen::VectorXd x0(4);
  x0 << c0, std::log(fwhm0), y[peak] - lo, lo;
  const auto rep = levenberg_marquardt(gaussian_peak_problem(s), x0, options);
  const double fwhm = std::exp(rep.x[1]);
  const std::string unit = s.kind == AxisKind::Nanometer ? "_nm" : "_ev";
  auto r = finish(rep,
                  {{"center" + unit, rep.x[0], 1.0},
                   {"fwhm" + unit, fwhm, fwhm},
                   {"amplitude", rep.x[2], 1.0},
                   {"baseline", rep.x[3], 1.0}},
                  true);
  r.params.insert(r.params.begin() + 2,
                  {"sigma" + unit, fwhm / kFwhmPerSigma, r.params[1].sigma / kFwhmPerSigma});
  return r;
}

}  // namespace emlab
