#include "emlab/timetag.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "emlab/errors.hpp"
#include "emlab/seeding.hpp"

namespace emlab {

namespace {

constexpr std::array<char, 8> kMagic = {'E', 'M', 'L', 'A', 'B', 'T', 'T', '\0'};
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kRecordBytes = 9;
constexpr std::size_t kFooterBytes = 40;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[at + i]} << (8 * i);
  return v;
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[at + i]} << (8 * i);
  return v;
}

}  // namespace

TimeTagStream TimeTagStream::sorted(std::vector<TimeTag> tags, std::uint64_t duration_ps,
                                    AcquisitionMeta meta) {
  std::stable_sort(tags.begin(), tags.end(), tag_before);
  return TimeTagStream(std::move(tags), duration_ps, meta);
}

TimeTagStream TimeTagStream::channel(std::uint8_t ch) const {
  std::vector<TimeTag> out;
  std::copy_if(tags_.begin(), tags_.end(), std::back_inserter(out),
               [ch](const TimeTag& t) { return t.channel == ch; });
  return TimeTagStream(std::move(out), duration_ps_, meta_);
}

ValidationReport validate(const TimeTagStream& s) {
  ValidationReport report;
  auto tags = s.tags();
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i > 0 && tags[i].t_ps < tags[i - 1].t_ps) report.out_of_order.push_back(i);
    if (tags[i].channel > 1) report.bad_channel.push_back(i);
    if (tags[i].t_ps > s.duration_ps()) report.beyond_duration.push_back(i);
  }
  return report;
}

TimeTagStream merge_streams(const TimeTagStream& a, const TimeTagStream& b) {
  if (!(a.meta() == b.meta())) throw MetaMismatch("merge_streams: acquisition metadata differ");
  std::vector<TimeTag> out;
  out.reserve(a.size() + b.size());
  // std::merge is stable: for equivalent elements, those of the first range come first.
  std::merge(a.tags().begin(), a.tags().end(), b.tags().begin(), b.tags().end(),
             std::back_inserter(out), tag_before);
  return TimeTagStream(std::move(out), std::max(a.duration_ps(), b.duration_ps()), a.meta());
}

std::pair<TimeTagStream, TimeTagStream> hbt_split(const TimeTagStream& s, double transmittance,
                                                   std::uint64_t seed) {
  if (!(transmittance >= 0.0 && transmittance <= 1.0))
    throw DomainError("hbt_split: transmittance must lie in [0, 1]");
  Rng rng(seed);
  std::bernoulli_distribution transmitted(transmittance);
  std::vector<TimeTag> ch0, ch1;
  ch0.reserve(static_cast<std::size_t>(s.size() * transmittance) + 16);
  ch1.reserve(static_cast<std::size_t>(s.size() * (1.0 - transmittance)) + 16);
  for (const auto& tag : s.tags()) {
    if (transmitted(rng))
      ch0.push_back({tag.t_ps, 0});
    else
      ch1.push_back({tag.t_ps, 1});
  }
  return {TimeTagStream(std::move(ch0), s.duration_ps(), s.meta()),
          TimeTagStream(std::move(ch1), s.duration_ps(), s.meta())};
}

TimeTagStream shift(const TimeTagStream& s, std::uint64_t offset_ps) {
  std::vector<TimeTag> out(s.tags().begin(), s.tags().end());
  for (auto& t : out) t.t_ps += offset_ps;
  return TimeTagStream(std::move(out), s.duration_ps() + offset_ps, s.meta());
}

std::vector<std::uint8_t> encode_binary(const TimeTagStream& s) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + kRecordBytes * s.size() + kFooterBytes);
  for (char c : kMagic) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kTimeTagFormatVersion);
  put_u32(out, 0);
  for (const auto& tag : s.tags()) {
    put_u64(out, tag.t_ps);
    out.push_back(tag.channel);
  }
  put_u64(out, s.size());
  put_u64(out, s.meta().repetition_period_ps);
  put_u64(out, s.duration_ps());
  put_u64(out, std::bit_cast<std::uint64_t>(s.meta().laser_wavelength_nm));
  put_u64(out, std::bit_cast<std::uint64_t>(s.meta().power_uw));
  return out;
}

TimeTagStream decode_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + kFooterBytes) throw FormatError("time-tag file truncated");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw FormatError("time-tag file: bad magic");
  if (auto version = get_u32(bytes, 8); version != kTimeTagFormatVersion)
    throw FormatError("time-tag file: unsupported version " + std::to_string(version));

  const std::size_t footer = bytes.size() - kFooterBytes;
  const std::uint64_t count = get_u64(bytes, footer);
  if ((footer - kHeaderBytes) % kRecordBytes != 0 ||
      (footer - kHeaderBytes) / kRecordBytes != count)
    throw FormatError("time-tag file: record count does not match payload size");

  AcquisitionMeta meta;
  meta.repetition_period_ps = get_u64(bytes, footer + 8);
  const std::uint64_t duration = get_u64(bytes, footer + 16);
  meta.laser_wavelength_nm = std::bit_cast<double>(get_u64(bytes, footer + 24));
  meta.power_uw = std::bit_cast<double>(get_u64(bytes, footer + 32));

  std::vector<TimeTag> tags(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = kHeaderBytes + i * kRecordBytes;
    tags[i] = {get_u64(bytes, at), bytes[at + 8]};
  }
  return TimeTagStream(std::move(tags), duration, meta);
}

void write_binary(const TimeTagStream& s, const std::filesystem::path& path) {
  const auto bytes = encode_binary(s);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

TimeTagStream read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_binary(bytes);
}

void write_csv(const TimeTagStream& s, std::ostream& out) {
  out << "t_ps,channel\n";
  for (const auto& tag : s.tags()) out << tag.t_ps << ',' << unsigned{tag.channel} << '\n';
}

TimeTagStream read_csv(std::istream& in, const AcquisitionMeta& meta) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("time-tag CSV: missing header");
  if (line.rfind("t_ps,channel", 0) != 0) throw FormatError("time-tag CSV: expected header t_ps,channel");
  std::vector<TimeTag> tags;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    std::uint64_t t = 0;
    unsigned ch = 0;
    char comma = 0;
    if (!(row >> t >> comma >> ch) || comma != ',' || ch > 255)
      throw FormatError("time-tag CSV: malformed line " + std::to_string(lineno));
    tags.push_back({t, static_cast<std::uint8_t>(ch)});
  }
  std::uint64_t duration = 0;
  for (const auto& t : tags) duration = std::max(duration, t.t_ps);
  return TimeTagStream::sorted(std::move(tags), duration, meta);
}

}  // namespace emlab
