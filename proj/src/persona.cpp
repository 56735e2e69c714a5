#include "dzlab/persona.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "dzlab/errors.hpp"

namespace dzlab {

using nlohmann::json;

void PersonaProfile::validate(const KinematicLimits& limits) const {
  if (!(reaction_mean_s > 0.0) || reaction_sd_s < 0.0) {
    throw ConfigError("persona '" + name + "': invalid reaction time");
  }
  if (!(decision_gain > 0.0)) {
    throw ConfigError("persona '" + name + "': decision_gain must be positive");
  }
  if (!(comfort_decel_mps2 > 0.0) || comfort_decel_mps2 > limits.b_max) {
    throw ConfigError("persona '" + name + "': comfort_decel must lie in (0, b_max]");
  }
  if (!(go_accel_mps2 > 0.0) || go_accel_mps2 > limits.a_max) {
    throw ConfigError("persona '" + name + "': go_accel must lie in (0, a_max]");
  }
  if (!(desired_speed_mps > 0.0)) {
    throw ConfigError("persona '" + name + "': desired speed must be positive");
  }
}

double sample_reaction(const PersonaProfile& profile, Rng& rng) {
  const double mean = profile.reaction_mean_s;
  const double sd = profile.reaction_sd_s;
  if (sd == 0.0) return std::clamp(mean, kReactionMinS, kReactionMaxS);
  const double sigma2 = std::log1p((sd * sd) / (mean * mean));
  const double sigma = std::sqrt(sigma2);
  const double mu = std::log(mean) - 0.5 * sigma2;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double draw = std::exp(mu + sigma * rng.normal());
    if (draw >= kReactionMinS && draw <= kReactionMaxS) return draw;
  }
  return std::clamp(mean, kReactionMinS, kReactionMaxS);
}

double go_probability(const PersonaProfile& profile, const VehicleState& state,
                      double yellow_remaining, const KinematicLimits& limits) {
  const double x = std::max(state.position_m, 0.0);
  const double margin = yellow_remaining - time_to_clear(x, state.speed_mps, limits);
  const double z = profile.decision_gain * margin + profile.go_bias;
  return 1.0 / (1.0 + std::exp(-z));
}

Decision decide(const PersonaProfile& profile, const VehicleState& state,
                double yellow_remaining, const KinematicLimits& limits, Rng& rng) {
  const double p = go_probability(profile, state, yellow_remaining, limits);
  return rng.bernoulli(p) ? Decision::Go : Decision::Stop;
}

Episode rollout(const PersonaProfile& profile, const Scenario& scenario, Rng& rng) {
  const KinematicLimits& limits = scenario.limits;
  EpisodeRecorder rec(profile.name, scenario);
  const double reaction = sample_reaction(profile, rng);
  const double decision_t = scenario.timing.yellow_onset() + reaction;

  double committed_accel = 0.0;
  bool committed = false;
  while (!rec.finished()) {
    const VehicleState& s = rec.current();
    if (!committed && s.t_s >= decision_t - 1e-9) {
      const double yellow_left = std::max(0.0, scenario.timing.red_onset() - decision_t);
      const Decision d = decide(profile, s, yellow_left, limits, rng);
      rec.latch(d, decision_t);
      committed = true;
      if (d == Decision::Go) {
        committed_accel = profile.go_accel_mps2;
      } else {
        const double target = s.position_m - kStopStandoffM;
        const double required = target > 0.0
                                    ? s.speed_mps * s.speed_mps / (2.0 * target)
                                    : std::numeric_limits<double>::infinity();
        committed_accel = -std::min(required, limits.b_max);
      }
    }
    double accel;
    if (committed) {
      accel = committed_accel;
    } else {
      accel = std::clamp(kSpeedTrackingGain * (profile.desired_speed_mps - s.speed_mps),
                         -profile.comfort_decel_mps2, profile.go_accel_mps2);
    }
    rec.advance(accel);
  }
  return rec.finish();
}

std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t state = base * 0x2545F4914F6CDD1DULL + index;
  return splitmix64(state);
}

namespace {

std::uint64_t name_hash(const std::string& name) {
  // FNV-1a, stable across platforms.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng behavior_rng(const PersonaProfile& p, std::uint64_t scenario_seed) {
  return Rng::derive(scenario_seed, name_hash(p.name));
}

}  // namespace

std::vector<Episode> simulate_fleet(const std::vector<PersonaProfile>& profiles,
                                    std::size_t count, std::uint64_t seed,
                                    const ScenarioConfig& config) {
  config.validate();
  for (const auto& p : profiles) p.validate(config.limits);
  std::vector<Episode> out;
  out.reserve(profiles.size() * count);
  for (const auto& p : profiles) {
    for (std::size_t i = 0; i < count; ++i) {
      const Scenario sc = generate_scenario(episode_seed(seed, i), config);
      Rng rng = behavior_rng(p, sc.seed);
      out.push_back(rollout(p, sc, rng));
    }
  }
  return out;
}

double fleet_go_rate(const PersonaProfile& profile, std::size_t count,
                     std::uint64_t seed, const ScenarioConfig& config) {
  if (count == 0) return 0.0;
  std::size_t go = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const Scenario sc = generate_scenario(episode_seed(seed, i), config);
    Rng rng = behavior_rng(profile, sc.seed);
    if (rollout(profile, sc, rng).decision == Decision::Go) ++go;
  }
  return static_cast<double>(go) / static_cast<double>(count);
}

CalibrationResult calibrate_go_bias(PersonaProfile profile, double target_pof_go,
                                    std::size_t count, std::uint64_t seed,
                                    const ScenarioConfig& config, double tolerance,
                                    int max_iter) {
  if (!(target_pof_go > 0.0 && target_pof_go < 1.0)) {
    throw ConfigError("calibration target must lie in (0, 1)");
  }
  double lo = -20.0, hi = 20.0;
  CalibrationResult best{0.0, 0.0, 0};
  double best_err = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    profile.go_bias = mid;
    const double rate = fleet_go_rate(profile, count, seed, config);
    const double err = std::abs(rate - target_pof_go);
    if (err < best_err) {
      best_err = err;
      best = {mid, rate, it};
    }
    if (err <= tolerance) break;
    if (rate < target_pof_go) {
      lo = mid;
    } else {
      hi = mid;
    }
    best.iterations = it;
  }
  return best;
}

json to_json(const PersonaProfile& p) {
  return {{"name", p.name},
          {"desired_speed_mps", p.desired_speed_mps},
          {"reaction_mean_s", p.reaction_mean_s},
          {"reaction_sd_s", p.reaction_sd_s},
          {"go_bias", p.go_bias},
          {"decision_gain", p.decision_gain},
          {"comfort_decel_mps2", p.comfort_decel_mps2},
          {"go_accel_mps2", p.go_accel_mps2}};
}

PersonaProfile persona_from_json(const json& j) {
  PersonaProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.desired_speed_mps = j.at("desired_speed_mps").get<double>();
    p.reaction_mean_s = j.at("reaction_mean_s").get<double>();
    p.reaction_sd_s = j.at("reaction_sd_s").get<double>();
    p.go_bias = j.at("go_bias").get<double>();
    p.decision_gain = j.at("decision_gain").get<double>();
    p.comfort_decel_mps2 = j.at("comfort_decel_mps2").get<double>();
    p.go_accel_mps2 = j.at("go_accel_mps2").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("persona: ") + e.what());
  }
  return p;
}

std::vector<PersonaProfile> load_personas(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open persona file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("persona file '" + path + "': " + e.what());
  }
  const json& list = j.is_object() ? j.at("personas") : j;
  std::vector<PersonaProfile> out;
  for (const auto& item : list) out.push_back(persona_from_json(item));
  return out;
}

void save_personas(const std::string& path, const std::vector<PersonaProfile>& personas) {
  json list = json::array();
  for (const auto& p : personas) list.push_back(to_json(p));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << json{{"personas", list}}.dump(2) << '\n';
}

}  // namespace dzlab
