#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dzlab/kinematics.hpp"

namespace dzlab {

enum class Phase { Green, Yellow, Red };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

struct SignalTiming {
  double green_remaining_s = 0.0;
  double yellow_s = 3.5;
  double all_red_s = 0.0;

  double yellow_onset() const { return green_remaining_s; }
  double red_onset() const { return green_remaining_s + yellow_s; }

  friend bool operator==(const SignalTiming&, const SignalTiming&) = default;
};

// Green while t < yellow onset, Yellow until red onset, Red afterwards.
Phase phase_at(const SignalTiming& timing, double t);

// Remaining yellow time at t, zero outside the yellow phase.
double yellow_remaining_at(const SignalTiming& timing, double t);

struct ScenarioConfig {
  double v_lo_mps = 40.0 / 3.6;
  double v_hi_mps = 100.0 / 3.6;
  double green_lo_s = 2.0;
  double green_hi_s = 6.0;
  double yellow_s = 3.5;
  double all_red_s = 0.0;
  double dt_s = 1.0 / 50.0;
  double t_far_s = kZoneFarS;
  double t_near_s = kZoneNearS;
  KinematicLimits limits;

  void validate() const;
};

struct Scenario {
  std::uint64_t seed = 0;
  VehicleState initial;
  SignalTiming timing;
  KinematicLimits limits;
  double dt_s = 1.0 / 50.0;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Draws v0 ~ U[v_lo, v_hi] and g ~ U[green_lo, green_hi], then places the
// vehicle at x0 = t_far * v0 + v0 * g so that constant-speed travel reaches
// the far edge of the option zone exactly at yellow onset.
Scenario generate_scenario(std::uint64_t seed, const ScenarioConfig& config);

// JSON keys mirror the struct fields; missing keys keep their defaults and
// unknown keys are rejected.
ScenarioConfig scenario_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScenarioConfig& c);
ScenarioConfig load_scenario_config(const std::string& path);

nlohmann::json to_json(const KinematicLimits& l);
KinematicLimits limits_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

}  // namespace dzlab
