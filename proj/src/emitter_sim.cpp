#include "emlab/emitter_sim.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <random>

#include "emlab/errors.hpp"
#include "emlab/seeding.hpp"

namespace emlab {

namespace {

// Sub-stream identifiers for derive_seed.
enum : std::uint64_t { kEmissionStream = 1, kBlinkStream = 2, kNoiseStream = 3, kSplitStream = 4 };

struct Interval {
  double begin_ps;
  double end_ps;
};

// Off periods of a telegraph process over [0, duration).
std::vector<Interval> dark_intervals(const Blinking& b, double duration_ps, Rng& rng) {
  std::vector<Interval> off;
  if (!b.enabled) return off;
  std::exponential_distribution<double> on_time(1.0 / (b.mean_on_s * 1e12));
  std::exponential_distribution<double> off_time(1.0 / (b.mean_off_s * 1e12));
  std::bernoulli_distribution starts_on(b.mean_on_s / (b.mean_on_s + b.mean_off_s));
  bool on = starts_on(rng);
  double t = 0.0;
  while (t < duration_ps) {
    const double dwell = on ? on_time(rng) : off_time(rng);
    if (!on) off.push_back({t, t + dwell});
    t += dwell;
    on = !on;
  }
  return off;
}

std::vector<TimeTag> emitter_tags(const EmitterModel& m, const AcquisitionConfig& c,
                                  std::size_t index) {
  std::vector<TimeTag> tags;
  const double q = excitation_probability(c.power_uw, m) * m.efficiency;
  if (q <= 0.0) return tags;

  const std::uint64_t period = c.rep_period_ps();
  const std::uint64_t duration = c.duration_ps();
  const std::int64_t n_pulses = static_cast<std::int64_t>(duration / period);

  Rng rng(derive_seed(c.seed, {index, kEmissionStream}));
  Rng blink_rng(derive_seed(c.seed, {index, kBlinkStream}));
  const auto off = dark_intervals(m.blinking, static_cast<double>(duration), blink_rng);
  std::size_t off_cursor = 0;

  std::geometric_distribution<std::int64_t> skip(q >= 1.0 ? 0.5 : q);
  std::exponential_distribution<double> decay(1.0 / (m.lifetime_ns * 1e3));
  std::normal_distribution<double> jitter(0.0, c.irf_sigma_ps);
  const bool has_jitter = c.irf_sigma_ps > 0.0;

  tags.reserve(static_cast<std::size_t>(q * static_cast<double>(n_pulses) * 1.01) + 16);
  std::int64_t pulse = -1;
  while (true) {
    pulse += 1 + (q >= 1.0 ? 0 : skip(rng));
    if (pulse >= n_pulses) break;
    const double pulse_ps = static_cast<double>(pulse) * static_cast<double>(period);
    double delay = decay(rng);
    if (has_jitter) delay += jitter(rng);

    while (off_cursor < off.size() && off[off_cursor].end_ps <= pulse_ps) ++off_cursor;
    if (off_cursor < off.size() && off[off_cursor].begin_ps <= pulse_ps) continue;

    const double t = std::round(pulse_ps + delay);
    if (t < 0.0 || t >= static_cast<double>(duration)) continue;
    tags.push_back({static_cast<std::uint64_t>(t), 0});
  }
  return tags;
}

std::vector<TimeTag> noise_tags(const AcquisitionConfig& c) {
  std::vector<TimeTag> tags;
  const double rate = c.dark_rate_hz + c.background_rate_hz;
  const std::uint64_t duration = c.duration_ps();
  if (rate <= 0.0 || duration == 0) return tags;
  Rng rng(derive_seed(c.seed, {kNoiseStream}));
  std::poisson_distribution<std::uint64_t> count(rate * c.duration_s);
  std::uniform_int_distribution<std::uint64_t> when(0, duration - 1);
  const auto n = count(rng);
  tags.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) tags.push_back({when(rng), 0});
  return tags;
}

}  // namespace

std::uint64_t AcquisitionConfig::rep_period_ps() const {
  return static_cast<std::uint64_t>(std::llround(1e6 / rep_rate_mhz));
}

std::uint64_t AcquisitionConfig::duration_ps() const {
  return static_cast<std::uint64_t>(std::llround(duration_s * 1e12));
}

AcquisitionMeta AcquisitionConfig::meta() const {
  return {rep_period_ps(), laser_wavelength_nm, power_uw};
}

void check(const EmitterModel& m) {
  if (!(m.lifetime_ns > 0.0)) throw ConfigError("emitter: lifetime_ns must be > 0");
  if (!(m.p_max >= 0.0 && m.p_max <= 1.0)) throw ConfigError("emitter: p_max must lie in [0, 1]");
  if (!(m.p_sat_uw > 0.0)) throw ConfigError("emitter: p_sat_uw must be > 0");
  if (!(m.efficiency > 0.0 && m.efficiency <= 1.0))
    throw ConfigError("emitter: efficiency must lie in (0, 1]");
  if (m.blinking.enabled && !(m.blinking.mean_on_s > 0.0 && m.blinking.mean_off_s > 0.0))
    throw ConfigError("emitter: blinking dwell times must be > 0");
}

void check(const AcquisitionConfig& c) {
  if (!(c.rep_rate_mhz > 0.0)) throw ConfigError("acquisition: rep_rate_mhz must be > 0");
  if (!(c.duration_s >= 0.0)) throw ConfigError("acquisition: duration_s must be >= 0");
  if (!(c.power_uw >= 0.0)) throw ConfigError("acquisition: power_uw must be >= 0");
  if (!(c.irf_sigma_ps >= 0.0)) throw ConfigError("acquisition: irf_sigma_ps must be >= 0");
  if (!(c.dark_rate_hz >= 0.0 && c.background_rate_hz >= 0.0))
    throw ConfigError("acquisition: rates must be >= 0");
}

double excitation_probability(double power_uw, const EmitterModel& model) {
  if (!(power_uw >= 0.0)) throw DomainError("excitation_probability: power must be >= 0");
  return model.p_max * power_uw / (power_uw + model.p_sat_uw);
}

double expected_signal_rate_hz(const EmitterModel& model, const AcquisitionConfig& config) {
  return config.rep_rate_mhz * 1e6 * excitation_probability(config.power_uw, model) *
         model.efficiency;
}

TimeTagStream simulate_stream(std::span<const EmitterModel> models, const AcquisitionConfig& config) {
  check(config);
  for (const auto& m : models) check(m);

  std::vector<std::vector<TimeTag>> parts(models.size() + 1);
  if (config.threads > 1 && models.size() > 1) {
    std::vector<std::future<std::vector<TimeTag>>> jobs;
    for (std::size_t i = 0; i < models.size(); ++i)
      jobs.push_back(std::async(std::launch::async, emitter_tags, std::cref(models[i]),
                                std::cref(config), i));
    for (std::size_t i = 0; i < models.size(); ++i) parts[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < models.size(); ++i) parts[i] = emitter_tags(models[i], config, i);
  }
  parts.back() = noise_tags(config);

  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<TimeTag> all;
  all.reserve(total);
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return TimeTagStream::sorted(std::move(all), config.duration_ps(), config.meta());
}

TimeTagStream simulate_hbt(std::span<const EmitterModel> models, const AcquisitionConfig& config,
                           double transmittance) {
  const auto combined = simulate_stream(models, config);
  auto [ch0, ch1] = hbt_split(combined, transmittance, derive_seed(config.seed, {kSplitStream}));
  return merge_streams(ch0, ch1);
}

std::uint64_t sample_emitter_count(double mean_lambda, std::uint64_t seed) {
  if (!(mean_lambda >= 0.0)) throw DomainError("sample_emitter_count: lambda must be >= 0");
  if (mean_lambda == 0.0) return 0;
  Rng rng(seed);
  return std::poisson_distribution<std::uint64_t>(mean_lambda)(rng);
}

double dose_to_density(double dwell_time_s, double lambda_max, double t0_s) {
  if (!(dwell_time_s >= 0.0) || !(lambda_max >= 0.0) || !(t0_s > 0.0))
    throw DomainError("dose_to_density: require dwell >= 0, lambda_max >= 0, t0 > 0");
  return lambda_max * -std::expm1(-dwell_time_s / t0_s);
}

}  // namespace emlab
