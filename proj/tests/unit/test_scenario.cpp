#include <doctest.h>

#include "dzlab/errors.hpp"
#include "dzlab/rng.hpp"
#include "dzlab/scenario.hpp"

using namespace dzlab;
using doctest::Approx;
using nlohmann::json;

TEST_SUITE("scenario") {

TEST_CASE("fixed ranges give the placement formula") {
  ScenarioConfig c;
  c.v_lo_mps = c.v_hi_mps = 15.0;
  c.green_lo_s = c.green_hi_s = 4.0;
  const Scenario s = generate_scenario(7, c);
  CHECK(s.initial.speed_mps == 15.0);
  CHECK(s.initial.position_m == Approx(142.5));
  CHECK(s.timing.yellow_onset() == 4.0);
}

TEST_CASE("zero green starts on the far zone edge") {
  ScenarioConfig c;
  c.v_lo_mps = c.v_hi_mps = 20.0;
  c.green_lo_s = c.green_hi_s = 0.0;
  CHECK(generate_scenario(1, c).initial.position_m == dz_bounds(20.0).start_m);
}

TEST_CASE("generation is deterministic") {
  const ScenarioConfig c;
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL, 0xFFFFFFFFFFFFFFFFULL}) {
    CHECK(generate_scenario(seed, c) == generate_scenario(seed, c));
  }
}

TEST_CASE("constant-speed travel reaches the far zone edge at yellow onset") {
  const ScenarioConfig c;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const Scenario s = generate_scenario(seed, c);
    const double v = s.initial.speed_mps;
    REQUIRE(v >= c.v_lo_mps);
    REQUIRE(v <= c.v_hi_mps);
    const double at_onset = s.initial.position_m - v * s.timing.yellow_onset();
    CHECK(std::abs(at_onset - dz_bounds(v).start_m) < 1e-9);
  }
}

TEST_CASE("phase boundaries") {
  const SignalTiming t{4.0, 3.5, 0.0};
  CHECK(phase_at(t, 0.0) == Phase::Green);
  CHECK(phase_at(t, 3.999) == Phase::Green);
  CHECK(phase_at(t, 4.0) == Phase::Yellow);
  CHECK(phase_at(t, 7.499) == Phase::Yellow);
  CHECK(phase_at(t, 7.5) == Phase::Red);
  CHECK_THROWS_AS(phase_at(t, -0.1), DomainError);
  CHECK(yellow_remaining_at(t, 5.0) == Approx(2.5));
  CHECK(yellow_remaining_at(t, 1.0) == 0.0);
  CHECK(yellow_remaining_at(t, 9.0) == 0.0);
}

TEST_CASE("phase strings") {
  for (Phase p : {Phase::Green, Phase::Yellow, Phase::Red}) CHECK(phase_from_string(to_string(p)) == p);
  CHECK_THROWS(phase_from_string("amber"));
}

TEST_CASE("config json round trip and rejection") {
  ScenarioConfig c;
  c.yellow_s = 4.0;
  c.limits.b_max = 4.5;
  const ScenarioConfig back = scenario_config_from_json(to_json(c));
  CHECK(back.yellow_s == 4.0);
  CHECK(back.limits.b_max == 4.5);
  CHECK_THROWS_AS(scenario_config_from_json(json{{"yelow_s", 3.0}}), ConfigError);
  CHECK_THROWS_AS(scenario_config_from_json(json{{"yellow_s", -1.0}}), ConfigError);
  CHECK_THROWS_AS(scenario_config_from_json(json{{"speed_range_mps", {30.0, 10.0}}}), ConfigError);
}

TEST_CASE("scenario json round trip") {
  const Scenario s = generate_scenario(123, {});
  CHECK(scenario_from_json(to_json(s)) == s);
  CHECK(scenario_from_json(json::parse(to_json(s).dump())) == s);
}

}
