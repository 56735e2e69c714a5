#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dzlab/episode.hpp"
#include "dzlab/scenario.hpp"

namespace dzlab {

struct ControlInput {
  double throttle = 0.0;
  double brake = 0.0;

  friend bool operator==(const ControlInput&, const ControlInput&) = default;
};

// throttle * a_max - brake * b_max
double accel_command(const ControlInput& c, const KinematicLimits& limits);

struct Ack {
  bool accepted = true;
  std::string reason;
};

enum class SessionStatus { Running, Finished };

// One human-in-the-loop approach. Inputs are buffered and sampled at the
// next tick boundary; within a tick the last control wins.
class Session {
 public:
  Session(std::string session_id, std::string driver_id, const Scenario& scenario);

  const std::string& id() const { return id_; }
  const std::string& driver_id() const { return driver_id_; }
  const Scenario& scenario() const { return scenario_; }
  SessionStatus status() const { return status_; }
  const VehicleState& current() const { return recorder_.current(); }
  Phase phase() const { return recorder_.phase(); }
  bool decided() const { return recorder_.decided(); }
  // True once the vehicle is at standstill or 2 s past the line.
  bool done() const { return recorder_.finished(); }

  Ack apply_control(const ControlInput& c);
  // Latches at the current tick time. Rejected before yellow onset, after a
  // previous decision, or once finished.
  Ack apply_decision(Decision d);

  void tick();

  nlohmann::json state_message() const;
  nlohmann::json summary_message(const Episode& e) const;

  Episode finish();

 private:
  std::string id_;
  std::string driver_id_;
  Scenario scenario_;
  EpisodeRecorder recorder_;
  ControlInput pending_;
  SessionStatus status_ = SessionStatus::Running;
};

// Owns live sessions and the per-driver episode store. Sessions share no
// mutable state; only the registry and the store are guarded.
class SessionManager {
 public:
  SessionManager(ScenarioConfig defaults, std::string store_dir);

  // Throws ConfigError for invalid driver ids or configs and
  // SessionConflict when the id is already live.
  std::shared_ptr<Session> start(const std::string& driver_id, std::uint64_t seed,
                                 const std::optional<nlohmann::json>& config_override);
  // Appends the finished episode to <store>/<driver_id>.jsonl.
  Episode finish(const std::shared_ptr<Session>& s);
  void abort(const std::shared_ptr<Session>& s);

  std::size_t live_sessions() const;
  std::string store_path(const std::string& driver_id) const;

 private:
  ScenarioConfig defaults_;
  std::string store_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> live_;
  std::mutex store_mu_;
};

class SessionConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-tick control script for offline replay: controls[i] is applied on the
// tick that starts at sample i; the decision is latched at `decision_tick`.
struct ControlScript {
  std::vector<ControlInput> controls;
  std::optional<std::size_t> decision_tick;
  Decision decision = Decision::Stop;
};

// Direct rollout of a control script through the recorder, no session or
// transport involved. Runs until the episode ends; past the end of the
// script the last control is held.
Episode replay_controls(const std::string& driver_id, const Scenario& scenario,
                        const ControlScript& script);

}  // namespace dzlab
