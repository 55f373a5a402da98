#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "emlab/errors.hpp"
#include "emlab/timetag.hpp"

using namespace emlab;

namespace {

TimeTagStream random_stream(std::mt19937_64& rng, std::size_t n, std::uint64_t span, AcquisitionMeta meta = {}) {
  std::uniform_int_distribution<std::uint64_t> t(0, span);
  std::uniform_int_distribution<int> ch(0, 1);
  std::vector<TimeTag> tags(n);
  for (auto& tag : tags) tag = {t(rng), static_cast<std::uint8_t>(ch(rng))};
  return TimeTagStream::sorted(std::move(tags), span, meta);
}

}  // namespace

TEST_CASE("merge of empty streams is empty") {
  const auto m = merge_streams(TimeTagStream{}, TimeTagStream{});
  CHECK(m.empty());
  CHECK(m.duration_ps() == 0);
}

TEST_CASE("merge sorts a two-element case") {
  TimeTagStream a({{5, 0}}, 10, {});
  TimeTagStream b({{3, 1}}, 8, {});
  const auto m = merge_streams(a, b);
  REQUIRE(m.size() == 2);
  CHECK(m.tags()[0] == TimeTag{3, 1});
  CHECK(m.tags()[1] == TimeTag{5, 0});
  CHECK(m.duration_ps() == 10);
}

TEST_CASE("merge of two 1e6-tag streams equals a full sort of the concatenation") {
  std::mt19937_64 rng(7);
  const auto a = random_stream(rng, 1'000'000, 1'000'000'000);
  const auto b = random_stream(rng, 1'000'000, 1'000'000'000);
  std::vector<TimeTag> all(a.tags().begin(), a.tags().end());
  all.insert(all.end(), b.tags().begin(), b.tags().end());
  std::stable_sort(all.begin(), all.end(), tag_before);

  const auto m = merge_streams(a, b);
  CHECK(m.size() == 2'000'000);
  CHECK(std::equal(all.begin(), all.end(), m.tags().begin(), m.tags().end()));
}

TEST_CASE("merge rejects differing metadata") {
  AcquisitionMeta other;
  other.repetition_period_ps = 12'500;
  CHECK_THROWS_AS(merge_streams(TimeTagStream({}, 0, {}), TimeTagStream({}, 0, other)), MetaMismatch);
}

TEST_CASE("merge is commutative and associative (property)") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_stream(rng, rng() % 200, 500);
    const auto b = random_stream(rng, rng() % 200, 500);
    const auto c = random_stream(rng, rng() % 200, 500);
    const auto ab = merge_streams(a, b);
    CHECK(ab.tags().size() == a.size() + b.size());
    CHECK(validate(ab).ok());
    const auto ba = merge_streams(b, a);
    CHECK(std::equal(ab.tags().begin(), ab.tags().end(), ba.tags().begin(), ba.tags().end()));
    const auto left = merge_streams(ab, c);
    const auto right = merge_streams(a, merge_streams(b, c));
    CHECK(left == right);
  }
}

TEST_CASE("hbt_split with transmittance 1 keeps everything on channel 0") {
  std::mt19937_64 rng(3);
  const auto s = random_stream(rng, 1000, 100'000);
  const auto [c0, c1] = hbt_split(s, 1.0, 99);
  CHECK(c0.size() == 1000);
  CHECK(c1.empty());
}

TEST_CASE("hbt_split at 50/50 follows the binomial") {
  std::vector<TimeTag> tags(1'000'000);
  for (std::size_t i = 0; i < tags.size(); ++i) tags[i] = {i * 10, 0};
  const TimeTagStream s(std::move(tags), 10'000'000, {});
  const auto [c0, c1] = hbt_split(s, 0.5, 2024);
  const double n = 1e6, mean = 0.5 * n, sd = std::sqrt(n * 0.25);
  CHECK(std::abs(static_cast<double>(c0.size()) - mean) < 5.0 * sd);
}

TEST_CASE("hbt_split is deterministic and conserves tags (property)") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stream(rng, 1 + rng() % 5000, 1'000'000);
    const double T = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto first = hbt_split(s, T, trial);
    const auto second = hbt_split(s, T, trial);
    CHECK(first.first == second.first);
    CHECK(first.second == second.second);
    CHECK(first.first.size() + first.second.size() == s.size());
    for (const auto& t : first.first.tags()) CHECK(t.channel == 0);
    for (const auto& t : first.second.tags()) CHECK(t.channel == 1);

    // Union of outputs recovers every timestamp exactly.
    std::vector<std::uint64_t> in, out;
    for (const auto& t : s.tags()) in.push_back(t.t_ps);
    for (const auto& t : merge_streams(first.first, first.second).tags()) out.push_back(t.t_ps);
    CHECK(in == out);
  }
}

TEST_CASE("hbt_split rejects transmittance outside [0, 1]") {
  CHECK_THROWS_AS(hbt_split(TimeTagStream{}, 1.5, 0), DomainError);
}

TEST_CASE("validate") {
  SUBCASE("sorted valid stream gives an empty report") {
    TimeTagStream s({{1, 0}, {2, 1}, {2, 1}, {9, 0}}, 10, {});
    CHECK(validate(s).ok());
  }
  SUBCASE("out-of-order tag is listed by index") {
    TimeTagStream s({{1, 0}, {5, 1}, {3, 0}, {9, 0}}, 10, {});
    const auto r = validate(s);
    REQUIRE(r.out_of_order.size() == 1);
    CHECK(r.out_of_order[0] == 2);
  }
  SUBCASE("channel 7 is flagged") {
    TimeTagStream s({{1, 0}, {2, 7}}, 10, {});
    const auto r = validate(s);
    REQUIRE(r.bad_channel.size() == 1);
    CHECK(r.bad_channel[0] == 1);
  }
  SUBCASE("tags beyond the duration are flagged") {
    TimeTagStream s({{1, 0}, {20, 0}}, 10, {});
    CHECK(validate(s).beyond_duration == std::vector<std::size_t>{1});
  }
}

TEST_CASE("binary encode/decode round-trips bit-identically (property)") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    AcquisitionMeta meta{1 + rng() % 100'000, 300.0 + static_cast<double>(rng() % 400) / 7.0,
                         static_cast<double>(rng() % 1000) / 3.0};
    const auto s = random_stream(rng, rng() % 3000, 1ULL << 50, meta);
    const auto bytes = encode_binary(s);
    CHECK(bytes.size() == 16 + 9 * s.size() + 40);
    const auto back = decode_binary(bytes);
    CHECK(back == s);
    CHECK(encode_binary(back) == bytes);
  }
}

TEST_CASE("binary layout is little-endian with the documented header and footer") {
  const TimeTagStream s({{0x0102030405060708ULL, 1}}, 0x0102030405060709ULL, {50'000, 530.0, 114.0});
  const auto b = encode_binary(s);
  CHECK(std::string(b.begin(), b.begin() + 7) == "EMLABTT");
  CHECK(b[8] == 1);   // version
  CHECK(b[16] == 0x08);
  CHECK(b[23] == 0x01);
  CHECK(b[24] == 1);  // channel
  CHECK(b[25] == 1);  // footer: record count
  CHECK(b[33] == 0x50);  // 50'000 = 0xC350
  CHECK(b[34] == 0xC3);
}

TEST_CASE("corrupted binary input is rejected") {
  const TimeTagStream s({{1, 0}, {2, 1}}, 5, {});
  auto b = encode_binary(s);
  SUBCASE("bad magic") {
    b[0] = 'X';
    CHECK_THROWS_AS(decode_binary(b), FormatError);
  }
  SUBCASE("truncated payload") {
    b.erase(b.begin() + 20);
    CHECK_THROWS_AS(decode_binary(b), FormatError);
  }
  SUBCASE("too short") {
    b.resize(10);
    CHECK_THROWS_AS(decode_binary(b), FormatError);
  }
}

TEST_CASE("CSV export and import") {
  const TimeTagStream s({{3, 0}, {7, 1}, {7, 0}}, 7, {});
  std::stringstream io;
  write_csv(s, io);
  CHECK(io.str() == "t_ps,channel\n3,0\n7,1\n7,0\n");
  const auto back = read_csv(io);
  REQUIRE(back.size() == 3);
  CHECK(back.tags()[1] == TimeTag{7, 0});  // sorted on import
  CHECK(back.duration_ps() == 7);

  std::stringstream bad("t_ps,channel\n1;0\n");
  CHECK_THROWS_AS(read_csv(bad), FormatError);
}
