#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace emlab {

/// One photon detection: integer picoseconds since acquisition start.
struct TimeTag {
  std::uint64_t t_ps = 0;
  std::uint8_t channel = 0;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

/// Ordering used everywhere a stream is sorted: time, then channel.
constexpr bool tag_before(const TimeTag& a, const TimeTag& b) noexcept {
  return a.t_ps < b.t_ps || (a.t_ps == b.t_ps && a.channel < b.channel);
}

struct AcquisitionMeta {
  std::uint64_t repetition_period_ps = 50'000;  // 20 MHz
  double laser_wavelength_nm = 530.0;
  double power_uw = 0.0;

  friend bool operator==(const AcquisitionMeta&, const AcquisitionMeta&) = default;
};

/// An immutable, shareable sequence of time tags.
///
/// Construction does not enforce sortedness; call validate() to check a
/// stream that came from outside the library. Every operation in the
/// library produces sorted streams.
class TimeTagStream {
 public:
  TimeTagStream() = default;
  TimeTagStream(std::vector<TimeTag> tags, std::uint64_t duration_ps, AcquisitionMeta meta)
      : tags_(std::move(tags)), duration_ps_(duration_ps), meta_(meta) {}

  /// Sorts the tags by (t, channel), keeping input order for exact ties.
  static TimeTagStream sorted(std::vector<TimeTag> tags, std::uint64_t duration_ps,
                              AcquisitionMeta meta);

  std::span<const TimeTag> tags() const noexcept { return tags_; }
  std::size_t size() const noexcept { return tags_.size(); }
  bool empty() const noexcept { return tags_.empty(); }
  std::uint64_t duration_ps() const noexcept { return duration_ps_; }
  const AcquisitionMeta& meta() const noexcept { return meta_; }

  /// Tags of one channel, as a new stream with the same duration and meta.
  TimeTagStream channel(std::uint8_t ch) const;

  friend bool operator==(const TimeTagStream&, const TimeTagStream&) = default;

 private:
  std::vector<TimeTag> tags_;
  std::uint64_t duration_ps_ = 0;
  AcquisitionMeta meta_;
};

struct ValidationReport {
  std::vector<std::size_t> out_of_order;     // index i where tag i precedes tag i-1
  std::vector<std::size_t> bad_channel;      // channel not in {0, 1}
  std::vector<std::size_t> beyond_duration;  // t > duration

  bool ok() const noexcept {
    return out_of_order.empty() && bad_channel.empty() && beyond_duration.empty();
  }
};

ValidationReport validate(const TimeTagStream& s);

/// Merges two sorted streams. Ties are broken by (t, channel, source),
/// with tags of `a` first. Throws MetaMismatch if the metadata differ.
TimeTagStream merge_streams(const TimeTagStream& a, const TimeTagStream& b);

/// Routes every tag through a beamsplitter: channel 0 with probability
/// `transmittance`, otherwise channel 1. Output channels are relabelled.
std::pair<TimeTagStream, TimeTagStream> hbt_split(const TimeTagStream& s, double transmittance,
                                                   std::uint64_t seed);

/// Shifts every tag by `offset_ps`; duration grows by the same amount.
TimeTagStream shift(const TimeTagStream& s, std::uint64_t offset_ps);

// Binary file format (little-endian):
//   header  16 bytes: "EMLABTT\0" magic, u32 version, u32 reserved (0)
//   records  9 bytes each: u64 t_ps, u8 channel
//   footer  40 bytes: u64 record count, u64 repetition period (ps),
//                     u64 duration (ps), f64 laser wavelength (nm),
//                     f64 excitation power (uW)
inline constexpr std::uint32_t kTimeTagFormatVersion = 1;

std::vector<std::uint8_t> encode_binary(const TimeTagStream& s);
TimeTagStream decode_binary(std::span<const std::uint8_t> bytes);

void write_binary(const TimeTagStream& s, const std::filesystem::path& path);
TimeTagStream read_binary(const std::filesystem::path& path);

/// CSV with header "t_ps,channel". Import takes duration as the last
/// timestamp and the supplied meta; the result is sorted.
void write_csv(const TimeTagStream& s, std::ostream& out);
TimeTagStream read_csv(std::istream& in, const AcquisitionMeta& meta = {});

}  // namespace emlab
