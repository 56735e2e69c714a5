#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dzlab/kinematics.hpp"
#include "dzlab/scenario.hpp"

namespace dzlab {

enum class Decision { Stop = 0, Go = 1 };

std::string_view to_string(Decision d);
Decision decision_from_string(std::string_view s);

struct TickSample {
  double t_s = 0.0;
  double position_m = 0.0;
  double speed_mps = 0.0;
  double accel_mps2 = 0.0;
  Phase phase = Phase::Green;

  friend bool operator==(const TickSample&, const TickSample&) = default;
};

struct Episode {
  std::string driver_id;
  Scenario scenario;
  std::vector<TickSample> samples;
  std::optional<Decision> decision;
  double decision_t_s = 0.0;  // meaningful only when decision is set
  bool ran_red = false;
  std::optional<double> crossed_line_t_s;

  // Sample index at the decision tick (nearest tick at or after decision_t_s).
  std::size_t decision_index() const;
  // First sample index at or after yellow onset.
  std::size_t yellow_onset_index() const;

  friend bool operator==(const Episode&, const Episode&) = default;
};

// Crossing the line at/after red onset, or a Stop that comes to rest past it.
bool compute_ran_red(const Episode& e);

// Seconds the episode keeps running after the vehicle crosses the line.
inline constexpr double kPostCrossingS = 2.0;
inline constexpr double kMaxEpisodeS = 120.0;

// Builds an Episode tick by tick. Persona rollouts and live sessions both go
// through this class so that their episodes are identical in form.
class EpisodeRecorder {
 public:
  EpisodeRecorder(std::string driver_id, const Scenario& scenario);

  const VehicleState& current() const { return state_; }
  Phase phase() const;
  double yellow_remaining() const;
  bool decided() const { return episode_.decision.has_value(); }
  bool finished() const { return finished_; }
  std::size_t ticks() const { return episode_.samples.size() - 1; }

  // Latches the decision, stamped with the current tick time unless `at` is
  // given. Returns false if a decision was already recorded.
  bool latch(Decision d, std::optional<double> at = std::nullopt);

  // Advances one tick under accel_cmd and records the resulting sample.
  void advance(double accel_cmd);

  // Finalizes outcome flags. Safe to call once the episode is finished or to
  // cut it short.
  Episode finish();

 private:
  Episode episode_;
  VehicleState state_;
  bool finished_ = false;
};

nlohmann::json to_json(const Episode& e);
// Validates the schema and the sample-ordering invariant.
Episode episode_from_json(const nlohmann::json& j);

void write_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes);
void append_episode_jsonl(const std::string& path, const Episode& episode);
std::vector<Episode> read_episodes_jsonl(const std::string& path);

// Tick-level CSV for plotting.
void write_episodes_csv(std::ostream& out, const std::vector<Episode>& episodes);

}  // namespace dzlab
