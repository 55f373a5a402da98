#include "emlab/correlate.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "emlab/errors.hpp"

namespace emlab {

namespace {

bool sorted_by_time(const TimeTagStream& s) {
  auto tags = s.tags();
  return std::is_sorted(tags.begin(), tags.end(),
                        [](const TimeTag& a, const TimeTag& b) { return a.t_ps < b.t_ps; });
}

// Accumulates pairs for ch0 tags in [first, last).
void sweep(std::span<const TimeTag> a, std::span<const TimeTag> b, std::size_t first,
           std::size_t last, std::int64_t max_delay, std::int64_t width, std::int64_t half_bins,
           std::vector<std::uint64_t>& counts) {
  if (first >= last || b.empty()) return;
  const auto lower_time = [&](std::size_t i) {
    const auto t = static_cast<std::int64_t>(a[i].t_ps) - max_delay;
    return t;
  };
  std::size_t lo = static_cast<std::size_t>(
      std::lower_bound(b.begin(), b.end(), lower_time(first),
                       [](const TimeTag& tag, std::int64_t t) {
                         return static_cast<std::int64_t>(tag.t_ps) < t;
                       }) -
      b.begin());
  for (std::size_t i = first; i < last; ++i) {
    const auto ta = static_cast<std::int64_t>(a[i].t_ps);
    while (lo < b.size() && static_cast<std::int64_t>(b[lo].t_ps) < ta - max_delay) ++lo;
    for (std::size_t j = lo; j < b.size(); ++j) {
      const std::int64_t d = static_cast<std::int64_t>(b[j].t_ps) - ta;
      if (d > max_delay) break;
      ++counts[static_cast<std::size_t>(delay_bin(d, width) + half_bins)];
    }
  }
}

}  // namespace

std::int64_t delay_bin(std::int64_t delay_ps, std::int64_t bin_width_ps) noexcept {
  const std::int64_t mag = delay_ps < 0 ? -delay_ps : delay_ps;
  const std::int64_t j = (mag + bin_width_ps / 2) / bin_width_ps;
  return delay_ps < 0 ? -j : j;
}

std::vector<double> CorrelationHistogram::delays_ps() const {
  std::vector<double> d(counts.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = delay_ps(k);
  return d;
}

std::int64_t CorrelationHistogram::bin_span_ps(std::size_t k) const noexcept {
  if (k == center_index()) return 2 * (bin_width_ps - bin_width_ps / 2) - 1;
  return bin_width_ps;
}

std::uint64_t CorrelationHistogram::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

CorrelationHistogram correlation_histogram(const TimeTagStream& ch0, const TimeTagStream& ch1,
                                           std::int64_t bin_width_ps, std::int64_t window_ps,
                                           unsigned threads) {
  if (bin_width_ps <= 0 || window_ps <= 0 || window_ps % bin_width_ps != 0)
    throw DomainError("correlation_histogram: bin width must be positive and divide the window");
  if (!sorted_by_time(ch0) || !sorted_by_time(ch1))
    throw NotSorted("correlation_histogram: input streams must be sorted by time");

  const std::int64_t half_bins = window_ps / bin_width_ps;
  // Largest |delay| that still rounds into the outermost bin.
  const std::int64_t max_delay = window_ps + (bin_width_ps - bin_width_ps / 2) - 1;

  CorrelationHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.window_ps = window_ps;
  h.rep_period_ps = ch0.meta().repetition_period_ps;
  h.counts.assign(static_cast<std::size_t>(2 * half_bins + 1), 0);

  const auto a = ch0.tags();
  const auto b = ch1.tags();
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, a.size() / 4096 + 1));
  if (workers == 1) {
    sweep(a, b, 0, a.size(), max_delay, bin_width_ps, half_bins, h.counts);
    return h;
  }

  std::vector<std::future<std::vector<std::uint64_t>>> jobs;
  const std::size_t block = (a.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t first = w * block;
    const std::size_t last = std::min(a.size(), first + block);
    jobs.push_back(std::async(std::launch::async, [=, n = h.counts.size()] {
      std::vector<std::uint64_t> part(n, 0);
      sweep(a, b, first, last, max_delay, bin_width_ps, half_bins, part);
      return part;
    }));
  }
  for (auto& job : jobs) {
    const auto part = job.get();
    for (std::size_t k = 0; k < part.size(); ++k) h.counts[k] += part[k];
  }
  return h;
}

std::int64_t window_for_side_peaks(std::uint64_t rep_period_ps, int periods,
                                   std::int64_t bin_width_ps) {
  const auto T = static_cast<std::int64_t>(rep_period_ps);
  const std::int64_t reach = periods * T + T / 2;
  return (reach + bin_width_ps - 1) / bin_width_ps * bin_width_ps;
}

G2Result g2_zero_pulsed(const CorrelationHistogram& h, int n_side_peaks) {
  if (h.rep_period_ps == 0) throw DomainError("g2_zero_pulsed: histogram has no repetition period");
  if (n_side_peaks < 1) throw DomainError("g2_zero_pulsed: need at least one side peak per side");
  const auto T = static_cast<double>(h.rep_period_ps);
  const double reach = static_cast<double>(h.window_ps) + 0.5 * static_cast<double>(h.bin_width_ps);
  if (reach < n_side_peaks * T + 0.5 * T)
    throw DomainError("g2_zero_pulsed: window does not cover the requested side peaks");

  const auto peak_area = [&](int m) {
    double area = 0.0;
    const double lo = m * T - 0.5 * T;
    const double hi = m * T + 0.5 * T;
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double c = h.delay_ps(k);
      if (c >= lo && c < hi) area += static_cast<double>(h.counts[k]);
    }
    return area;
  };

  G2Result r;
  r.center_area = peak_area(0);
  double side_total = 0.0;
  for (int m = 1; m <= n_side_peaks; ++m) side_total += peak_area(m) + peak_area(-m);
  r.n_side_peaks_used = 2 * n_side_peaks;
  if (side_total <= 0.0) throw DegenerateNormalization("g2_zero_pulsed: side peaks are empty");
  r.mean_side_area = side_total / r.n_side_peaks_used;
  r.g2_zero = r.center_area / r.mean_side_area;
  r.uncertainty = r.center_area > 0.0
                      ? r.g2_zero * std::sqrt(1.0 / r.center_area + 1.0 / side_total)
                      : 1.0 / r.mean_side_area;
  return r;
}

EmitterClass classify_emitter(const G2Result& g2) {
  if (g2.g2_zero < 0.5) return EmitterClass::Single;
  if (g2.g2_zero > 1.0) return EmitterClass::Ensemble;
  return EmitterClass::NonSingle;
}

const char* to_string(EmitterClass c) {
  switch (c) {
    case EmitterClass::Single: return "single";
    case EmitterClass::NonSingle: return "non-single";
    case EmitterClass::Ensemble: return "ensemble";
  }
  return "unknown";
}

}  // namespace emlab
