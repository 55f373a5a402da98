#pragma once

#include <cstdint>
#include <vector>

#include "emlab/timetag.hpp"

namespace emlab {

/// Coincidence counts against delay t1 - t0.
///
/// Bins are centred on multiples of the bin width, from -window to +window
/// (2 * window / bin_width + 1 bins). A delay is assigned to the nearest
/// centre, with exact half-way delays rounded away from zero, so the
/// binning is mirror symmetric. For an even bin width the central bin
/// therefore holds one integer delay fewer than the others; see
/// bin_span_ps().
struct CorrelationHistogram {
  std::int64_t bin_width_ps = 256;
  std::int64_t window_ps = 0;
  std::uint64_t rep_period_ps = 0;
  std::vector<std::uint64_t> counts;

  std::size_t size() const noexcept { return counts.size(); }
  std::size_t center_index() const noexcept { return counts.size() / 2; }
  double delay_ps(std::size_t k) const noexcept {
    return static_cast<double>((static_cast<std::int64_t>(k) - static_cast<std::int64_t>(center_index())) *
                               bin_width_ps);
  }
  std::vector<double> delays_ps() const;
  /// Number of integer picosecond delays that map into bin k.
  std::int64_t bin_span_ps(std::size_t k) const noexcept;
  std::uint64_t total() const noexcept;
};

/// Signed bin offset from the centre bin for an integer delay.
std::int64_t delay_bin(std::int64_t delay_ps, std::int64_t bin_width_ps) noexcept;

/// Histogram of t_b - t_a over all pairs (a in ch0, b in ch1) with
/// |t_b - t_a| inside the outermost bin. Two-pointer sweep, O(N * pairs
/// per window). Throws NotSorted on unsorted input and DomainError when
/// the bin width does not divide the window.
///
/// `threads` > 1 splits ch0 into contiguous blocks; the result does not
/// depend on the split.
CorrelationHistogram correlation_histogram(const TimeTagStream& ch0, const TimeTagStream& ch1,
                                           std::int64_t bin_width_ps, std::int64_t window_ps,
                                           unsigned threads = 1);

/// Smallest multiple of bin_width covering `periods` full peak windows,
/// i.e. periods * T + T / 2.
std::int64_t window_for_side_peaks(std::uint64_t rep_period_ps, int periods,
                                   std::int64_t bin_width_ps);

struct G2Result {
  double g2_zero = 0.0;
  double uncertainty = 0.0;
  double center_area = 0.0;
  double mean_side_area = 0.0;
  int n_side_peaks_used = 0;
};

/// Pulsed g2(0): area of the zero-delay peak over the mean area of the
/// 2 * n_side_peaks neighbouring peaks. Each peak integrates the bins whose
/// centre lies in [m T - T/2, m T + T/2). No background is subtracted.
G2Result g2_zero_pulsed(const CorrelationHistogram& h, int n_side_peaks = 10);

enum class EmitterClass { Single, NonSingle, Ensemble };

/// Single iff g2(0) < 0.5, Ensemble iff g2(0) > 1, NonSingle otherwise.
EmitterClass classify_emitter(const G2Result& g2);
const char* to_string(EmitterClass c);

}  // namespace emlab
