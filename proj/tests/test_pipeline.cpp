#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emlab/errors.hpp"
#include "emlab/manifest.hpp"
#include "emlab/pipeline.hpp"

using namespace emlab;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "name": "small",
  "seed": 99,
  "emitter": { "lifetime_ns": 3.83, "lifetime_spread_ns": 0.3, "efficiency": 0.002344 },
  "acquisition": { "rep_rate_mhz": 20.0, "irf_sigma_ps": 100.0, "dark_rate_hz": 100.0 },
  "spots": { "nx": 3, "ny": 2, "pitch_um": 3.0, "mean_emitters": 1.0 },
  "map": { "background_hz_per_pixel": 5.0 },
  "hbt": { "power_uw": 1140.0, "duration_s": 2.0, "background_rate_hz": 10000.0 },
  "saturation": { "powers_uw": [20, 60, 114, 300, 1000], "duration_s": 1.0 },
  "stability": { "power_uw": 114.0, "duration_s": 5.0, "interval_s": 1.0 }
})";

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("emlab_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> files_below(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("scenario parsing") {
  const auto s = parse_scenario(kSmall);
  CHECK(s.name == "small");
  CHECK(s.seed == 99);
  CHECK(s.spots.nx == 3);
  CHECK(s.hbt.power_uw == 1140.0);
  CHECK(s.saturation.powers_uw.size() == 5);
  CHECK(s.map.pixel_um == 0.1);  // default kept

  SUBCASE("round trip through JSON") {
    const auto again = parse_scenario(scenario_to_json(s));
    CHECK(scenario_to_json(again) == scenario_to_json(s));
  }
  SUBCASE("unknown keys are rejected at every level") {
    CHECK_THROWS_AS(parse_scenario(R"({"sede": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(R"({"map": {"pixel": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(R"({"emitter": {"blinking": {"on": 1}}})"), ConfigError);
  }
  SUBCASE("wrong types and invalid values are rejected") {
    CHECK_THROWS_AS(parse_scenario(R"({"seed": "x"})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(R"({"emitter": {"p_max": 2.0}})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario(R"({"lifetime": {"mode": "fancy"}})"), ConfigError);
    CHECK_THROWS_AS(parse_scenario("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_scenario("[1, 2]"), ConfigError);
  }
}

TEST_CASE("spot layout is deterministic in the seed") {
  const auto s = parse_scenario(kSmall);
  const auto a = generate_spots(s), b = generate_spots(s);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].center_um == b[i].center_um);
    CHECK(a[i].emitters.size() == b[i].emitters.size());
  }
}

TEST_CASE("empty scenario gives a valid report") {
  const auto dir = scratch("empty");
  const auto s = parse_scenario(R"({"name": "empty", "saturation": {"powers_uw": []}})");
  const auto r = run_pipeline(s, dir);
  CHECK(r.spots.empty());
  CHECK(r.occupied_spots == 0);
  CHECK(!r.saturation);
  CHECK(fs::exists(dir / "summary.txt"));
  const auto m = read_manifest(dir / "manifest.json");
  CHECK(m.status == "ok");
  fs::remove_all(dir);
}

TEST_CASE("small pipeline run") {
  const auto s = parse_scenario(kSmall);
  const auto dir_a = scratch("a"), dir_b = scratch("b"), dir_t = scratch("threads");
  const auto a = run_pipeline(s, dir_a);

  CHECK(a.truth.size() == 6);
  CHECK(a.occupied_detected == a.occupied_spots);
  for (const auto& spot : a.spots) {
    if (!spot.truth_index) continue;
    REQUIRE(spot.g2);
    // classification follows the true emitter count at these statistics
    CHECK((spot.true_emitters == 1) == (spot.emitter_class == EmitterClass::Single));
  }
  REQUIRE(a.saturation);
  CHECK(a.saturation->converged);
  REQUIRE(a.stability);
  CHECK(a.stability->relative_percent > 0.0);

  SUBCASE("manifest covers every output with its hash") {
    const auto m = read_manifest(dir_a / "manifest.json");
    CHECK(m.status == "ok");
    CHECK(m.seed == 99);
    for (const auto& f : files_below(dir_a)) {
      if (f == "manifest.json") continue;
      REQUIRE(m.outputs.count(f) == 1);
      CHECK(m.outputs.at(f) == sha256_file(dir_a / f));
    }
  }
  SUBCASE("repeat runs and thread counts give identical files") {
    run_pipeline(s, dir_b);
    auto st = s;
    st.threads = 3;
    run_pipeline(st, dir_t);
    const auto files = files_below(dir_a);
    CHECK(files == files_below(dir_b));
    CHECK(files == files_below(dir_t));
    for (const auto& f : files) {
      if (f == "manifest.json" || f == "scenario.json") continue;
      CAPTURE(f);
      CHECK(slurp(dir_a / f) == slurp(dir_b / f));
      CHECK(slurp(dir_a / f) == slurp(dir_t / f));
    }
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_t);
}

TEST_CASE("failed stage is recorded in the manifest") {
  auto s = parse_scenario(kSmall);
  s.saturation.powers_uw = {100.0, 200.0};  // too few powers for a three-parameter fit
  const auto dir = scratch("fail");
  bool threw = false;
  try {
    run_pipeline(s, dir);
  } catch (const Error&) {
    threw = true;
  }
  REQUIRE(threw);
  const auto m = read_manifest(dir / "manifest.json");
  CHECK(m.status == "failed");
  CHECK(m.failed_stage == "saturation");
  CHECK(m.error.has_value());
  CHECK(fs::exists(dir / "saturation.csv"));  // earlier outputs are kept
  fs::remove_all(dir);
}
