#include "emlab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "emlab/errors.hpp"
#include "emlab/json_io.hpp"
#include "emlab/manifest.hpp"
#include "emlab/seeding.hpp"

namespace emlab {

namespace {

using nlohmann::json;

// Reads an object field by field and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_emitter(const json& j, Scenario& s) {
  ObjectReader r(j, "emitter");
  auto& e = s.emitter;
  r.get("lifetime_ns", e.lifetime_ns);
  r.get("lifetime_spread_ns", s.lifetime_spread_ns);
  r.get("p_max", e.p_max);
  r.get("p_sat_uw", e.p_sat_uw);
  r.get("efficiency", e.efficiency);
  r.get("peak_wavelength_nm", e.peak_wavelength_nm);
  r.get("peak_wavelength_spread_nm", s.wavelength_spread_nm);
  r.get("fwhm_nm", e.fwhm_nm);
  if (const auto* b = r.child("blinking")) {
    ObjectReader rb(*b, "emitter.blinking");
    rb.get("enabled", e.blinking.enabled);
    rb.get("mean_on_s", e.blinking.mean_on_s);
    rb.get("mean_off_s", e.blinking.mean_off_s);
    rb.finish();
  }
  r.finish();
}

json emitter_json(const Scenario& s) {
  const auto& e = s.emitter;
  return json{{"lifetime_ns", e.lifetime_ns},
              {"lifetime_spread_ns", s.lifetime_spread_ns},
              {"p_max", e.p_max},
              {"p_sat_uw", e.p_sat_uw},
              {"efficiency", e.efficiency},
              {"peak_wavelength_nm", e.peak_wavelength_nm},
              {"peak_wavelength_spread_nm", s.wavelength_spread_nm},
              {"fwhm_nm", e.fwhm_nm},
              {"blinking",
               {{"enabled", e.blinking.enabled},
                {"mean_on_s", e.blinking.mean_on_s},
                {"mean_off_s", e.blinking.mean_off_s}}}};
}

LifetimeMode lifetime_mode_from(const std::string& m) {
  if (m == "convolved") return LifetimeMode::Convolved;
  if (m == "tail") return LifetimeMode::Tail;
  throw ConfigError("lifetime.mode must be 'convolved' or 'tail', got '" + m + "'");
}

const char* lifetime_mode_name(LifetimeMode m) { return m == LifetimeMode::Tail ? "tail" : "convolved"; }

// Runs body(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string padded(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string spot_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spot_%03zu", i);
  return buf;
}

double distance(PositionUm a, PositionUm b) { return std::hypot(a.x - b.x, a.y - b.y); }

MapGrid map_grid(const Scenario& s) {
  const double extent_x = s.spots.nx > 0 ? static_cast<double>(s.spots.nx - 1) * s.spots.pitch_um : 0.0;
  const double extent_y = s.spots.ny > 0 ? static_cast<double>(s.spots.ny - 1) * s.spots.pitch_um : 0.0;
  MapGrid g;
  g.pixel_size_um = s.map.pixel_um;
  g.nx = static_cast<std::size_t>(std::ceil((extent_x + 2.0 * s.map.margin_um) / s.map.pixel_um)) + 1;
  g.ny = static_cast<std::size_t>(std::ceil((extent_y + 2.0 * s.map.margin_um) / s.map.pixel_um)) + 1;
  return g;
}

AcquisitionConfig acquisition(const Scenario& s, double power_uw, double duration_s, std::uint64_t seed) {
  AcquisitionConfig c;
  c.rep_rate_mhz = s.rep_rate_mhz;
  c.power_uw = power_uw;
  c.duration_s = duration_s;
  c.irf_sigma_ps = s.irf_sigma_ps;
  c.dark_rate_hz = s.dark_rate_hz;
  c.laser_wavelength_nm = s.laser_wavelength_nm;
  c.seed = seed;
  return c;
}

// Histogram edges spanning the observed values.
std::vector<double> auto_edges(const std::vector<double>& v, std::size_t bins) {
  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(lo))) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  return edges;
}

std::optional<double> record_value(const EmitterRecord& r, Quantity q) {
  switch (q) {
    case Quantity::G2Zero:
      return r.g2_zero;
    case Quantity::Lifetime:
      if (!r.g2_zero || *r.g2_zero > 0.5) return std::nullopt;
      return r.lifetime_ns;
    case Quantity::Brightness:
      return r.brightness_hz;
    case Quantity::PeakWavelength:
      return r.peak_wavelength_nm;
    case Quantity::Fwhm:
      return r.fwhm_nm;
  }
  return std::nullopt;
}

// Collects written files for the manifest; safe to call from workers.
class OutputLog {
 public:
  explicit OutputLog(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }

  void text(const std::string& rel, const std::string& content) {
    write_text(root_ / rel, content);
    note(rel);
  }
  void note(const std::string& rel) {
    std::lock_guard lock(m_);
    files_.push_back(rel);
  }
  void fill(RunManifest& m) const {
    std::lock_guard lock(m_);
    auto files = files_;
    std::sort(files.begin(), files.end());
    for (const auto& f : files) m.outputs[f] = sha256_file(root_ / f);
  }

 private:
  std::filesystem::path root_;
  mutable std::mutex m_;
  std::vector<std::string> files_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Scenario

void check(const Scenario& s) {
  check(s.emitter);
  if (!(s.lifetime_spread_ns >= 0.0) || !(s.wavelength_spread_nm >= 0.0))
    throw ConfigError("scenario: spreads must be >= 0");
  if (s.threads < 1) throw ConfigError("scenario: threads must be >= 1");
  if (!(s.rep_rate_mhz > 0.0)) throw ConfigError("scenario: rep_rate_mhz must be > 0");
  if (!(s.irf_sigma_ps >= 0.0) || !(s.dark_rate_hz >= 0.0)) throw ConfigError("scenario: irf and dark rate must be >= 0");
  if (!(s.spots.pitch_um > 0.0) || !(s.spots.jitter_um >= 0.0) || !(s.spots.cluster_sigma_um >= 0.0))
    throw ConfigError("scenario: spot geometry must be positive");
  if (!(s.spots.mean_emitters >= 0.0)) throw ConfigError("scenario: spots.mean_emitters must be >= 0");
  if (s.spots.dose_dwell_s && (!(*s.spots.dose_dwell_s >= 0.0) || !(s.spots.dose_t0_s > 0.0) ||
                               !(s.spots.dose_lambda_max >= 0.0)))
    throw ConfigError("scenario: dose parameters out of range");
  if (!(s.map.pixel_um > 0.0) || !(s.map.psf_fwhm_um > 0.0) || !(s.map.exposure_s > 0.0) ||
      !(s.map.margin_um >= 0.0) || !(s.map.background_hz_per_pixel >= 0.0) || !(s.map.box_fwhm > 0.0) ||
      !(s.map.power_uw >= 0.0))
    throw ConfigError("scenario: map parameters out of range");
  if (!(s.hbt.duration_s > 0.0) || !(s.hbt.power_uw >= 0.0) || !(s.hbt.background_rate_hz >= 0.0) ||
      !(s.hbt.transmittance >= 0.0 && s.hbt.transmittance <= 1.0) || s.hbt.bin_ps <= 0 || s.hbt.side_peaks < 1)
    throw ConfigError("scenario: hbt parameters out of range");
  if (s.lifetime.bin_ps <= 0) throw ConfigError("scenario: lifetime.bin_ps must be > 0");
  if (!(s.spectra.max_nm > s.spectra.min_nm) || !(s.spectra.step_nm > 0.0) || !(s.spectra.peak_counts > 0.0))
    throw ConfigError("scenario: spectra range out of order");
  for (double p : s.saturation.powers_uw)
    if (!(p > 0.0)) throw ConfigError("scenario: saturation powers must be > 0");
  if (!(s.saturation.duration_s > 0.0)) throw ConfigError("scenario: saturation.duration_s must be > 0");
  if (!(s.stability.duration_s >= 0.0) || !(s.stability.interval_s > 0.0))
    throw ConfigError("scenario: stability timing out of range");
  if (s.histogram_bins < 1) throw ConfigError("scenario: histogram_bins must be >= 1");
}

Scenario parse_scenario(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: invalid JSON: ") + e.what());
  }
  Scenario s;
  ObjectReader r(j, "scenario");
  r.get("name", s.name);
  r.get("seed", s.seed);
  r.get("threads", s.threads);
  r.get("histogram_bins", s.histogram_bins);
  r.get("write_all_timetags", s.write_all_timetags);
  if (const auto* e = r.child("emitter")) read_emitter(*e, s);
  if (const auto* a = r.child("acquisition")) {
    ObjectReader ra(*a, "acquisition");
    ra.get("rep_rate_mhz", s.rep_rate_mhz);
    ra.get("irf_sigma_ps", s.irf_sigma_ps);
    ra.get("dark_rate_hz", s.dark_rate_hz);
    ra.get("laser_wavelength_nm", s.laser_wavelength_nm);
    ra.finish();
  }
  if (const auto* sp = r.child("spots")) {
    ObjectReader rs(*sp, "spots");
    rs.get("nx", s.spots.nx);
    rs.get("ny", s.spots.ny);
    rs.get("pitch_um", s.spots.pitch_um);
    rs.get("jitter_um", s.spots.jitter_um);
    rs.get("cluster_sigma_um", s.spots.cluster_sigma_um);
    rs.get("mean_emitters", s.spots.mean_emitters);
    if (const auto* d = rs.child("dose")) {
      ObjectReader rd(*d, "spots.dose");
      double dwell = 0.0;
      rd.get("dwell_s", dwell);
      rd.get("lambda_max", s.spots.dose_lambda_max);
      rd.get("t0_s", s.spots.dose_t0_s);
      rd.finish();
      s.spots.dose_dwell_s = dwell;
    }
    rs.finish();
  }
  if (const auto* m = r.child("map")) {
    ObjectReader rm(*m, "map");
    rm.get("pixel_um", s.map.pixel_um);
    rm.get("psf_fwhm_um", s.map.psf_fwhm_um);
    rm.get("margin_um", s.map.margin_um);
    rm.get("power_uw", s.map.power_uw);
    rm.get("exposure_s", s.map.exposure_s);
    rm.get("background_hz_per_pixel", s.map.background_hz_per_pixel);
    rm.get("threshold_sigma", s.map.threshold_sigma);
    rm.get("box_fwhm", s.map.box_fwhm);
    rm.finish();
  }
  if (const auto* h = r.child("hbt")) {
    ObjectReader rh(*h, "hbt");
    rh.get("power_uw", s.hbt.power_uw);
    rh.get("duration_s", s.hbt.duration_s);
    rh.get("background_rate_hz", s.hbt.background_rate_hz);
    rh.get("transmittance", s.hbt.transmittance);
    rh.get("bin_ps", s.hbt.bin_ps);
    rh.get("side_peaks", s.hbt.side_peaks);
    rh.finish();
  }
  if (const auto* l = r.child("lifetime")) {
    ObjectReader rl(*l, "lifetime");
    rl.get("bin_ps", s.lifetime.bin_ps);
    rl.get("phase_offset_ps", s.lifetime.phase_offset_ps);
    std::string mode = lifetime_mode_name(s.lifetime.mode);
    rl.get("mode", mode);
    s.lifetime.mode = lifetime_mode_from(mode);
    rl.finish();
  }
  if (const auto* sp = r.child("spectra")) {
    ObjectReader rs(*sp, "spectra");
    rs.get("min_nm", s.spectra.min_nm);
    rs.get("max_nm", s.spectra.max_nm);
    rs.get("step_nm", s.spectra.step_nm);
    rs.get("peak_counts", s.spectra.peak_counts);
    rs.finish();
  }
  if (const auto* sa = r.child("saturation")) {
    ObjectReader rs(*sa, "saturation");
    rs.get("powers_uw", s.saturation.powers_uw);
    rs.get("duration_s", s.saturation.duration_s);
    rs.finish();
  }
  if (const auto* st = r.child("stability")) {
    ObjectReader rs(*st, "stability");
    rs.get("power_uw", s.stability.power_uw);
    rs.get("duration_s", s.stability.duration_s);
    rs.get("interval_s", s.stability.interval_s);
    rs.finish();
  }
  r.finish();
  check(s);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) { return parse_scenario(read_text(path)); }

std::string scenario_to_json(const Scenario& s) {
  Json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["threads"] = s.threads;
  j["emitter"] = emitter_json(s);
  j["acquisition"] = {{"rep_rate_mhz", s.rep_rate_mhz},
                      {"irf_sigma_ps", s.irf_sigma_ps},
                      {"dark_rate_hz", s.dark_rate_hz},
                      {"laser_wavelength_nm", s.laser_wavelength_nm}};
  Json spots = {{"nx", s.spots.nx},
                {"ny", s.spots.ny},
                {"pitch_um", s.spots.pitch_um},
                {"jitter_um", s.spots.jitter_um},
                {"cluster_sigma_um", s.spots.cluster_sigma_um},
                {"mean_emitters", s.spots.mean_emitters}};
  if (s.spots.dose_dwell_s)
    spots["dose"] = {{"dwell_s", *s.spots.dose_dwell_s},
                     {"lambda_max", s.spots.dose_lambda_max},
                     {"t0_s", s.spots.dose_t0_s}};
  j["spots"] = spots;
  j["map"] = {{"pixel_um", s.map.pixel_um},
              {"psf_fwhm_um", s.map.psf_fwhm_um},
              {"margin_um", s.map.margin_um},
              {"power_uw", s.map.power_uw},
              {"exposure_s", s.map.exposure_s},
              {"background_hz_per_pixel", s.map.background_hz_per_pixel},
              {"threshold_sigma", s.map.threshold_sigma},
              {"box_fwhm", s.map.box_fwhm}};
  j["hbt"] = {{"power_uw", s.hbt.power_uw},
              {"duration_s", s.hbt.duration_s},
              {"background_rate_hz", s.hbt.background_rate_hz},
              {"transmittance", s.hbt.transmittance},
              {"bin_ps", s.hbt.bin_ps},
              {"side_peaks", s.hbt.side_peaks}};
  j["lifetime"] = {{"bin_ps", s.lifetime.bin_ps},
                   {"phase_offset_ps", s.lifetime.phase_offset_ps},
                   {"mode", lifetime_mode_name(s.lifetime.mode)}};
  j["spectra"] = {{"min_nm", s.spectra.min_nm},
                  {"max_nm", s.spectra.max_nm},
                  {"step_nm", s.spectra.step_nm},
                  {"peak_counts", s.spectra.peak_counts}};
  j["saturation"] = {{"powers_uw", s.saturation.powers_uw}, {"duration_s", s.saturation.duration_s}};
  j["stability"] = {{"power_uw", s.stability.power_uw},
                    {"duration_s", s.stability.duration_s},
                    {"interval_s", s.stability.interval_s}};
  j["histogram_bins"] = s.histogram_bins;
  j["write_all_timetags"] = s.write_all_timetags;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Ground truth

std::vector<SpotTruth> generate_spots(const Scenario& s) {
  const std::uint64_t base = stage_seed(s.seed, "spots");
  const double lambda = s.spots.dose_dwell_s
                            ? dose_to_density(*s.spots.dose_dwell_s, s.spots.dose_lambda_max, s.spots.dose_t0_s)
                            : s.spots.mean_emitters;
  std::vector<SpotTruth> out;
  for (std::size_t iy = 0; iy < s.spots.ny; ++iy)
    for (std::size_t ix = 0; ix < s.spots.nx; ++ix) {
      const std::uint64_t index = out.size();
      Rng rng(derive_seed(base, {index, 1}));
      std::uniform_real_distribution<double> jitter(-s.spots.jitter_um, s.spots.jitter_um);
      SpotTruth spot;
      spot.center_um = {s.map.margin_um + static_cast<double>(ix) * s.spots.pitch_um + jitter(rng),
                        s.map.margin_um + static_cast<double>(iy) * s.spots.pitch_um + jitter(rng)};
      const auto n = sample_emitter_count(lambda, derive_seed(base, {index, 0}));
      std::normal_distribution<double> cluster(0.0, 1.0);
      for (std::uint64_t k = 0; k < n; ++k) {
        EmitterModel e = s.emitter;
        double tau = e.lifetime_ns;
        if (s.lifetime_spread_ns > 0.0) do {
            tau = e.lifetime_ns + s.lifetime_spread_ns * cluster(rng);
          } while (tau <= 0.1 * e.lifetime_ns);
        e.lifetime_ns = tau;
        e.peak_wavelength_nm += s.wavelength_spread_nm * cluster(rng);
        e.position_um = {spot.center_um.x + s.spots.cluster_sigma_um * cluster(rng),
                         spot.center_um.y + s.spots.cluster_sigma_um * cluster(rng)};
        spot.emitters.push_back(e);
      }
      out.push_back(std::move(spot));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct SpotArtifacts {
  std::string g2_csv;
  std::string decay_csv;
};

SpotResult analyse_spot(const Scenario& s, std::size_t index, const std::vector<EmitterModel>& emitters,
                        SpotResult result, SpotArtifacts& art) {
  auto acq = acquisition(s, s.hbt.power_uw, s.hbt.duration_s, derive_seed(stage_seed(s.seed, "hbt"), {index}));
  acq.background_rate_hz = s.hbt.background_rate_hz;
  const auto stream = simulate_hbt(emitters, acq, s.hbt.transmittance);

  const auto window = window_for_side_peaks(acq.rep_period_ps(), s.hbt.side_peaks, s.hbt.bin_ps);
  const auto hist = correlation_histogram(stream.channel(0), stream.channel(1), s.hbt.bin_ps, window);
  std::ostringstream g2_csv;
  write_histogram_csv(hist, g2_csv);
  art.g2_csv = g2_csv.str();
  try {
    result.g2 = g2_zero_pulsed(hist, s.hbt.side_peaks);
    result.emitter_class = classify_emitter(*result.g2);
    result.record.g2_zero = result.g2->g2_zero;
  } catch (const Error& e) {
    result.errors.push_back(std::string("g2: ") + e.what());
  }

  const auto decay = decay_histogram(stream, s.lifetime.bin_ps, s.lifetime.phase_offset_ps);
  std::ostringstream decay_csv;
  write_decay_csv(decay, decay_csv);
  art.decay_csv = decay_csv.str();
  try {
    result.lifetime = fit_lifetime(decay, s.irf_sigma_ps, s.lifetime.mode);
    if (result.lifetime->converged)
      result.record.lifetime_ns = result.lifetime->value("tau_ns");
    else
      result.errors.push_back("lifetime: fit did not converge");
  } catch (const Error& e) {
    result.errors.push_back(std::string("lifetime: ") + e.what());
  }

  if (!emitters.empty()) {
    Rng rng(derive_seed(stage_seed(s.seed, "spectra"), {index}));
    Spectrum spec;
    spec.kind = AxisKind::Nanometer;
    const auto n = static_cast<std::size_t>(std::floor((s.spectra.max_nm - s.spectra.min_nm) / s.spectra.step_nm + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = s.spectra.min_nm + static_cast<double>(i) * s.spectra.step_nm;
      double mean = 0.0;
      for (const auto& e : emitters) {
        const double sd = e.fwhm_nm / kFwhmPerSigma;
        mean += s.spectra.peak_counts * std::exp(-0.5 * (x - e.peak_wavelength_nm) * (x - e.peak_wavelength_nm) / (sd * sd));
      }
      spec.axis.push_back(x);
      spec.intensity.push_back(static_cast<double>(std::poisson_distribution<std::int64_t>(mean)(rng)));
    }
    try {
      result.spectrum = fit_gaussian_peak(spec);
      if (result.spectrum->converged) {
        result.record.peak_wavelength_nm = result.spectrum->value("center_nm");
        result.record.fwhm_nm = result.spectrum->value("fwhm_nm");
      }
    } catch (const Error& e) {
      result.errors.push_back(std::string("spectrum: ") + e.what());
    }
  }
  return result;
}

std::string summary_text(const PipelineReport& r) {
  const auto& s = r.scenario;
  std::ostringstream out;
  out << "emlab pipeline: " << s.name << " (seed " << s.seed << ")\n\n";
  out << "spots generated      " << r.truth.size() << "\n";
  out << "spots occupied       " << r.occupied_spots << "\n";
  out << "occupied detected    " << r.occupied_detected << "\n";
  out << "detections           " << r.spots.size() << "\n";
  out << "false detections     " << r.false_detections << "\n";
  std::size_t n_single = 0, n_non = 0, n_ens = 0;
  for (const auto& sp : r.spots)
    if (sp.emitter_class) {
      n_single += *sp.emitter_class == EmitterClass::Single;
      n_non += *sp.emitter_class == EmitterClass::NonSingle;
      n_ens += *sp.emitter_class == EmitterClass::Ensemble;
    }
  out << "class single         " << n_single << "\n";
  out << "class non-single     " << n_non << "\n";
  out << "class ensemble       " << n_ens << "\n\n";

  if (!r.spots.empty()) {
    out << " spot     x_um     y_um  true       g2     +-       class   tau_ns  bright_kHz  peak_nm  fwhm_nm\n";
    for (std::size_t i = 0; i < r.spots.size(); ++i) {
      const auto& sp = r.spots[i];
      const auto opt = [](const std::optional<double>& v, int d) { return v ? fixed(*v, d) : std::string("-"); };
      out << padded(std::to_string(i), 5) << padded(fixed(sp.detection.position_um.x, 3), 9)
          << padded(fixed(sp.detection.position_um.y, 3), 9) << padded(std::to_string(sp.true_emitters), 6)
          << padded(sp.g2 ? fixed(sp.g2->g2_zero, 3) : "-", 9) << padded(sp.g2 ? fixed(sp.g2->uncertainty, 3) : "-", 7)
          << padded(sp.emitter_class ? to_string(*sp.emitter_class) : "-", 12)
          << padded(opt(sp.record.lifetime_ns, 3), 9)
          << padded(sp.record.brightness_hz ? fixed(*sp.record.brightness_hz * 1e-3, 2) : "-", 12)
          << padded(opt(sp.record.peak_wavelength_nm, 2), 9) << padded(opt(sp.record.fwhm_nm, 2), 9) << "\n";
    }
    out << "\n";
  }

  if (!r.stats.empty()) {
    out << "quantity               n        mean      stddev\n";
    for (const auto& [q, st] : r.stats)
      out << std::string(to_string(q)) + std::string(20 - std::min<std::size_t>(20, std::string(to_string(q)).size()), ' ')
          << padded(std::to_string(st.n), 4) << padded(fixed(st.mean, 4), 12) << padded(fixed(st.stddev, 4), 12) << "\n";
    out << "(lifetime restricted to g2(0) <= 0.5)\n\n";
  }
  if (r.saturation) {
    const auto& f = *r.saturation;
    out << "saturation  I_sat = " << fixed(f.value("i_sat_hz") * 1e-3, 3) << " +- " << fixed(f.sigma("i_sat_hz") * 1e-3, 3)
        << " kHz, P_sat = " << fixed(f.value("p_sat_uw"), 2) << " +- " << fixed(f.sigma("p_sat_uw"), 2)
        << " uW, I_d = " << fixed(f.value("i_dark_hz"), 1) << " +- " << fixed(f.sigma("i_dark_hz"), 1) << " Hz\n";
  }
  if (r.stability)
    out << "stability   mean = " << fixed(r.stability->mean_hz * 1e-3, 3) << " kHz, std = "
        << fixed(r.stability->std_hz * 1e-3, 3) << " kHz, relative = " << fixed(r.stability->relative_percent, 3)
        << " %\n";
  return out.str();
}

}  // namespace

PipelineReport run_pipeline(const Scenario& scenario, const std::filesystem::path& out_dir,
                            const PipelineOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  check(scenario);
  std::filesystem::create_directories(out_dir);
  OutputLog log(out_dir);
  RunManifest manifest;
  manifest.subcommand = "pipeline";
  manifest.seed = scenario.seed;
  manifest.parameters_json = options.parameters_json.empty() ? scenario_to_json(scenario) : options.parameters_json;
  for (const auto& in : options.inputs) manifest.add_input(in);

  PipelineReport report;
  report.scenario = scenario;
  const auto& s = scenario;
  std::string stage = "scenario";
  try {
    log.text("scenario.json", scenario_to_json(s));

    stage = "spots";
    report.truth = generate_spots(s);
    for (const auto& t : report.truth) report.occupied_spots += !t.emitters.empty();

    stage = "plmap";
    std::vector<MapSource> sources;
    AcquisitionConfig map_acq = acquisition(s, s.map.power_uw, 1.0, 0);
    for (const auto& t : report.truth)
      for (const auto& e : t.emitters) sources.push_back({e.position_um, expected_signal_rate_hz(e, map_acq)});
    const PSFModel psf{s.map.psf_fwhm_um};
    PLMap map = render_plmap(sources, psf, map_grid(s), s.map.exposure_s, stage_seed(s.seed, "plmap"),
                             s.map.background_hz_per_pixel, s.threads);
    map.excitation_wavelength_nm = s.laser_wavelength_nm;
    write_plmap(map, log.path("plmap.csv"), RasterFormat::Csv);
    log.note("plmap.csv");
    log.note("plmap.csv.json");

    stage = "detect";
    DetectOptions det_opt;
    det_opt.threshold_sigma = s.map.threshold_sigma;
    det_opt.psf_fwhm_um = s.map.psf_fwhm_um;
    const auto detections = detect_emitters(map, det_opt);
    const double box_um = s.map.box_fwhm * s.map.psf_fwhm_um;
    std::vector<bool> matched(report.truth.size(), false);
    for (const auto& d : detections) {
      SpotResult sr;
      sr.detection = d;
      sr.record.position_um = d.position_um;
      try {
        sr.integral = integrate_spot(map, d.position_um, box_um, detections);
        sr.record.brightness_hz = std::max(0.0, sr.integral.brightness_counts) / s.map.exposure_s;
      } catch (const Error& e) {
        sr.errors.push_back(std::string("integrate: ") + e.what());
      }
      double best = s.map.psf_fwhm_um;
      for (std::size_t t = 0; t < report.truth.size(); ++t) {
        const double dist = distance(d.position_um, report.truth[t].center_um);
        if (dist < best) {
          best = dist;
          sr.truth_index = t;
        }
      }
      if (sr.truth_index && !report.truth[*sr.truth_index].emitters.empty() && !matched[*sr.truth_index]) {
        matched[*sr.truth_index] = true;
        sr.true_emitters = report.truth[*sr.truth_index].emitters.size();
      } else {
        ++report.false_detections;
      }
      report.spots.push_back(std::move(sr));
    }
    for (bool m : matched) report.occupied_detected += m;
    {
      std::ostringstream csv;
      csv << "index,x_um,y_um,peak_counts,brightness_counts,background_per_pixel,box_pixels,blended\n";
      for (std::size_t i = 0; i < report.spots.size(); ++i) {
        const auto& sp = report.spots[i];
        csv << i << ',' << format_number(sp.detection.position_um.x) << ','
            << format_number(sp.detection.position_um.y) << ',' << format_number(sp.detection.peak_counts) << ','
            << format_number(sp.integral.brightness_counts) << ','
            << format_number(sp.integral.background_per_pixel) << ',' << sp.integral.box_pixels << ','
            << (sp.integral.blended ? 1 : 0) << '\n';
      }
      log.text("detections.csv", csv.str());
    }

    stage = "spots-analysis";
    std::filesystem::create_directories(out_dir / "g2");
    std::filesystem::create_directories(out_dir / "decay");
    std::vector<SpotArtifacts> artifacts(report.spots.size());
    const auto emitters_of = [&](std::size_t i) -> std::vector<EmitterModel> {
      const auto& sp = report.spots[i];
      return sp.truth_index ? report.truth[*sp.truth_index].emitters : std::vector<EmitterModel>{};
    };
    parallel_for(report.spots.size(), s.threads, [&](std::size_t i) {
      report.spots[i] = analyse_spot(s, i, emitters_of(i), std::move(report.spots[i]), artifacts[i]);
    });
    for (std::size_t i = 0; i < report.spots.size(); ++i) {
      log.text("g2/" + spot_name(i) + ".csv", artifacts[i].g2_csv);
      log.text("decay/" + spot_name(i) + ".csv", artifacts[i].decay_csv);
    }

    stage = "timetags";
    std::filesystem::create_directories(out_dir / "timetags");
    for (std::size_t i = 0; i < report.spots.size(); ++i) {
      const auto& sp = report.spots[i];
      const bool representative = sp.emitter_class == EmitterClass::Single &&
                                  std::none_of(report.spots.begin(), report.spots.begin() + static_cast<std::ptrdiff_t>(i),
                                               [](const SpotResult& o) { return o.emitter_class == EmitterClass::Single; });
      if (!representative && !s.write_all_timetags) continue;
      auto acq = acquisition(s, s.hbt.power_uw, s.hbt.duration_s, derive_seed(stage_seed(s.seed, "hbt"), {i}));
      acq.background_rate_hz = s.hbt.background_rate_hz;
      const auto rel = "timetags/" + spot_name(i) + ".ett";
      write_binary(simulate_hbt(emitters_of(i), acq, s.hbt.transmittance), log.path(rel));
      log.note(rel);
    }

    stage = "records";
    std::vector<EmitterRecord> records;
    for (const auto& sp : report.spots) records.push_back(sp.record);
    {
      std::ostringstream csv;
      write_records_csv(records, csv);
      log.text("records.csv", csv.str());
    }
    {
      Json spots = Json::array();
      for (std::size_t i = 0; i < report.spots.size(); ++i) {
        const auto& sp = report.spots[i];
        Json j;
        j["index"] = i;
        j["detection"] = to_json(sp.detection);
        j["brightness_counts"] = sp.integral.brightness_counts;
        j["blended"] = sp.integral.blended;
        j["truth_index"] = sp.truth_index ? Json(*sp.truth_index) : Json(nullptr);
        j["true_emitters"] = sp.true_emitters;
        if (sp.truth_index) {
          Json taus = Json::array();
          for (const auto& e : report.truth[*sp.truth_index].emitters) taus.push_back(e.lifetime_ns);
          j["true_lifetimes_ns"] = taus;
        }
        j["g2"] = sp.g2 ? to_json(*sp.g2) : Json(nullptr);
        j["lifetime"] = sp.lifetime ? to_json(*sp.lifetime) : Json(nullptr);
        j["spectrum"] = sp.spectrum ? to_json(*sp.spectrum) : Json(nullptr);
        j["errors"] = sp.errors;
        spots.push_back(j);
      }
      log.text("spots.json", spots.dump(2) + "\n");
    }

    stage = "saturation";
    if (!s.saturation.powers_uw.empty()) {
      const std::uint64_t base = stage_seed(s.seed, "saturation");
      std::vector<SaturationPoint> points(s.saturation.powers_uw.size());
      std::vector<EmitterModel> one{s.emitter};
      parallel_for(points.size(), s.threads, [&](std::size_t i) {
        const auto acq = acquisition(s, s.saturation.powers_uw[i], s.saturation.duration_s, derive_seed(base, {i}));
        const auto stream = simulate_stream(one, acq);
        points[i] = {s.saturation.powers_uw[i], static_cast<double>(stream.size()) / s.saturation.duration_s};
      });
      std::ostringstream csv;
      csv << "power_uw,rate_hz\n";
      for (const auto& p : points) csv << format_number(p.power_uw) << ',' << format_number(p.rate_hz) << '\n';
      log.text("saturation.csv", csv.str());
      report.saturation = fit_saturation(points);
      log.text("saturation_fit.json", to_json(*report.saturation).dump(2) + "\n");
    }

    stage = "stability";
    if (s.stability.duration_s > 0.0) {
      std::vector<EmitterModel> one{s.emitter};
      const auto acq = acquisition(s, s.stability.power_uw, s.stability.duration_s, stage_seed(s.seed, "stability"));
      const auto trace = bin_timetrace(simulate_stream(one, acq), s.stability.interval_s);
      std::ostringstream csv;
      csv << "t_s,counts\n";
      for (std::size_t i = 0; i < trace.size(); ++i)
        csv << format_number(static_cast<double>(i) * s.stability.interval_s) << ',' << format_number(trace[i]) << '\n';
      log.text("timetrace.csv", csv.str());
      report.stability = stability_metric(trace, s.stability.interval_s);
      log.text("stability.json", to_json(*report.stability).dump(2) + "\n");
    }

    stage = "stats";
    Json stats = Json::object();
    for (auto q : {Quantity::G2Zero, Quantity::Lifetime, Quantity::Brightness, Quantity::PeakWavelength,
                   Quantity::Fwhm}) {
      std::vector<double> values;
      for (const auto& r : records)
        if (auto v = record_value(r, q)) values.push_back(*v);
      if (values.empty()) continue;
      const auto edges = auto_edges(values, s.histogram_bins);
      report.stats[q] = aggregate_stats(records, q, edges);
      stats[to_string(q)] = to_json(report.stats[q]);
    }
    log.text("stats.json", stats.dump(2) + "\n");

    stage = "summary";
    report.summary = summary_text(report);
    log.text("summary.txt", report.summary);
  } catch (const std::exception& e) {
    manifest.status = "failed";
    manifest.failed_stage = stage;
    manifest.error = e.what();
    log.fill(manifest);
    manifest.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write(out_dir / "manifest.json");
    throw;
  }
  log.fill(manifest);
  manifest.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest.write(out_dir / "manifest.json");
  return report;
}

}  // namespace emlab
