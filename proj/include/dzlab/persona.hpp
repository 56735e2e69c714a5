#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dzlab/episode.hpp"
#include "dzlab/rng.hpp"
#include "dzlab/scenario.hpp"

namespace dzlab {

// Synthetic driver. go_bias and decision_gain shape the stop/go logistic on
// the time margin (yellow remaining minus time to reach the line at a_max).
struct PersonaProfile {
  std::string name;
  double desired_speed_mps = 18.0;
  double reaction_mean_s = 0.8;
  double reaction_sd_s = 0.2;
  double go_bias = 0.0;
  double decision_gain = 1.5;
  double comfort_decel_mps2 = 2.0;
  double go_accel_mps2 = 1.5;

  void validate(const KinematicLimits& limits) const;
  friend bool operator==(const PersonaProfile&, const PersonaProfile&) = default;
};

inline constexpr double kReactionMinS = 0.2;
inline constexpr double kReactionMaxS = 2.0;
// Proportional gain of the green-phase speed tracker, 1/s.
inline constexpr double kSpeedTrackingGain = 0.4;
// Stop execution aims this far upstream of the line.
inline constexpr double kStopStandoffM = 0.2;

// Log-normal with the profile's mean and sd, truncated to [0.2, 2.0] s by
// rejection.
double sample_reaction(const PersonaProfile& profile, Rng& rng);

double go_probability(const PersonaProfile& profile, const VehicleState& state,
                      double yellow_remaining, const KinematicLimits& limits);

Decision decide(const PersonaProfile& profile, const VehicleState& state,
                double yellow_remaining, const KinematicLimits& limits, Rng& rng);

Episode rollout(const PersonaProfile& profile, const Scenario& scenario, Rng& rng);

// Seed of the i-th scenario in a stream rooted at `base`.
std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index);

// Rolls out `count` episodes for each profile over the same scenario stream.
// Episodes are grouped by profile, in scenario order.
std::vector<Episode> simulate_fleet(const std::vector<PersonaProfile>& profiles,
                                    std::size_t count, std::uint64_t seed,
                                    const ScenarioConfig& config);

double fleet_go_rate(const PersonaProfile& profile, std::size_t count,
                     std::uint64_t seed, const ScenarioConfig& config);

struct CalibrationResult {
  double go_bias;
  double achieved_pof_go;
  int iterations;
};

// Bisection on go_bias with common random numbers, so the achieved PofGo is
// monotone in the bias.
CalibrationResult calibrate_go_bias(PersonaProfile profile, double target_pof_go,
                                    std::size_t count, std::uint64_t seed,
                                    const ScenarioConfig& config,
                                    double tolerance = 1e-3, int max_iter = 60);

nlohmann::json to_json(const PersonaProfile& p);
PersonaProfile persona_from_json(const nlohmann::json& j);
std::vector<PersonaProfile> load_personas(const std::string& path);
void save_personas(const std::string& path, const std::vector<PersonaProfile>& personas);

}  // namespace dzlab
