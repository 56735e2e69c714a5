#include "dzlab/scenario.hpp"

#include <fstream>
#include <set>

#include "dzlab/errors.hpp"
#include "dzlab/rng.hpp"

namespace dzlab {

using nlohmann::json;

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Green: return "green";
    case Phase::Yellow: return "yellow";
    case Phase::Red: return "red";
  }
  return "red";
}

Phase phase_from_string(std::string_view s) {
  if (s == "green") return Phase::Green;
  if (s == "yellow") return Phase::Yellow;
  if (s == "red") return Phase::Red;
  throw ConfigError("unknown phase '" + std::string(s) + "'");
}

Phase phase_at(const SignalTiming& timing, double t) {
  if (t < 0.0) throw DomainError("phase_at: negative time");
  if (t < timing.yellow_onset()) return Phase::Green;
  if (t < timing.red_onset()) return Phase::Yellow;
  return Phase::Red;
}

double yellow_remaining_at(const SignalTiming& timing, double t) {
  if (phase_at(timing, t) != Phase::Yellow) return 0.0;
  return timing.red_onset() - t;
}

void ScenarioConfig::validate() const {
  if (!(v_lo_mps > 0.0) || v_lo_mps > v_hi_mps) {
    throw ConfigError("speed range must satisfy 0 < v_lo <= v_hi");
  }
  if (green_lo_s < 0.0 || green_lo_s > green_hi_s) {
    throw ConfigError("green range must satisfy 0 <= g_lo <= g_hi");
  }
  if (!(yellow_s > 0.0)) throw ConfigError("yellow_s must be positive");
  if (all_red_s < 0.0) throw ConfigError("all_red_s must be non-negative");
  if (!(dt_s > 0.0)) throw ConfigError("dt_s must be positive");
  if (!(t_far_s > t_near_s) || !(t_near_s > 0.0)) {
    throw ConfigError("zone times must satisfy t_far > t_near > 0");
  }
  limits.validate();
}

Scenario generate_scenario(std::uint64_t seed, const ScenarioConfig& config) {
  config.validate();
  Rng rng(seed);
  const double v0 = rng.uniform(config.v_lo_mps, config.v_hi_mps);
  const double green = rng.uniform(config.green_lo_s, config.green_hi_s);

  Scenario s;
  s.seed = seed;
  s.initial.position_m = config.t_far_s * v0 + v0 * green;
  s.initial.speed_mps = v0;
  s.initial.accel_mps2 = 0.0;
  s.initial.t_s = 0.0;
  s.timing = {green, config.yellow_s, config.all_red_s};
  s.limits = config.limits;
  s.dt_s = config.dt_s;
  return s;
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError(std::string("unknown ") + what + " key '" + key + "'");
    }
  }
}

}  // namespace

json to_json(const KinematicLimits& l) {
  return {{"a_max", l.a_max}, {"b_max", l.b_max}, {"comfort_decel", l.comfort_decel}};
}

KinematicLimits limits_from_json(const json& j) {
  reject_unknown(j, {"a_max", "b_max", "comfort_decel"}, "limits");
  KinematicLimits l;
  read_opt(j, "a_max", l.a_max);
  read_opt(j, "b_max", l.b_max);
  l.comfort_decel = l.b_max;
  read_opt(j, "comfort_decel", l.comfort_decel);
  return l;
}

ScenarioConfig scenario_config_from_json(const json& j) {
  reject_unknown(j,
                 {"speed_range_mps", "green_range_s", "yellow_s", "all_red_s",
                  "dt_s", "zone_far_s", "zone_near_s", "limits"},
                 "scenario config");
  ScenarioConfig c;
  try {
    if (auto it = j.find("speed_range_mps"); it != j.end()) {
      c.v_lo_mps = it->at(0).get<double>();
      c.v_hi_mps = it->at(1).get<double>();
    }
    if (auto it = j.find("green_range_s"); it != j.end()) {
      c.green_lo_s = it->at(0).get<double>();
      c.green_hi_s = it->at(1).get<double>();
    }
    read_opt(j, "yellow_s", c.yellow_s);
    read_opt(j, "all_red_s", c.all_red_s);
    read_opt(j, "dt_s", c.dt_s);
    read_opt(j, "zone_far_s", c.t_far_s);
    read_opt(j, "zone_near_s", c.t_near_s);
    if (auto it = j.find("limits"); it != j.end()) c.limits = limits_from_json(*it);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const ScenarioConfig& c) {
  return {{"speed_range_mps", {c.v_lo_mps, c.v_hi_mps}},
          {"green_range_s", {c.green_lo_s, c.green_hi_s}},
          {"yellow_s", c.yellow_s},
          {"all_red_s", c.all_red_s},
          {"dt_s", c.dt_s},
          {"zone_far_s", c.t_far_s},
          {"zone_near_s", c.t_near_s},
          {"limits", to_json(c.limits)}};
}

ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario config '" + path + "': " + e.what());
  }
  return scenario_config_from_json(j);
}

json to_json(const Scenario& s) {
  return {{"seed", s.seed},
          {"x0_m", s.initial.position_m},
          {"v0_mps", s.initial.speed_mps},
          {"green_remaining_s", s.timing.green_remaining_s},
          {"yellow_s", s.timing.yellow_s},
          {"all_red_s", s.timing.all_red_s},
          {"dt_s", s.dt_s},
          {"limits", to_json(s.limits)}};
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.initial.position_m = j.at("x0_m").get<double>();
  s.initial.speed_mps = j.at("v0_mps").get<double>();
  s.timing.green_remaining_s = j.at("green_remaining_s").get<double>();
  s.timing.yellow_s = j.at("yellow_s").get<double>();
  s.timing.all_red_s = j.at("all_red_s").get<double>();
  s.dt_s = j.at("dt_s").get<double>();
  s.limits = limits_from_json(j.at("limits"));
  return s;
}

}  // namespace dzlab
