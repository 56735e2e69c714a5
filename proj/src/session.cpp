#include "dzlab/session.hpp"

#include <algorithm>
#include <filesystem>

#include <fmt/format.h>

#include "dzlab/errors.hpp"

namespace dzlab {

using nlohmann::json;

double accel_command(const ControlInput& c, const KinematicLimits& limits) {
  return c.throttle * limits.a_max - c.brake * limits.b_max;
}

Session::Session(std::string session_id, std::string driver_id, const Scenario& scenario)
    : id_(std::move(session_id)),
      driver_id_(std::move(driver_id)),
      scenario_(scenario),
      recorder_(driver_id_, scenario) {}

Ack Session::apply_control(const ControlInput& c) {
  if (status_ == SessionStatus::Finished) return {false, "session finished"};
  if (!(c.throttle >= 0.0 && c.throttle <= 1.0) || !(c.brake >= 0.0 && c.brake <= 1.0)) {
    return {false, "throttle and brake must lie in [0, 1]"};
  }
  pending_ = c;
  return {};
}

Ack Session::apply_decision(Decision d) {
  if (status_ == SessionStatus::Finished) return {false, "session finished"};
  if (recorder_.decided()) return {false, "decision already recorded"};
  if (recorder_.phase() == Phase::Green) return {false, "yellow has not started"};
  recorder_.latch(d);
  return {};
}

void Session::tick() {
  if (status_ == SessionStatus::Finished || recorder_.finished()) return;
  recorder_.advance(accel_command(pending_, scenario_.limits));
}

json Session::state_message() const {
  const VehicleState& s = recorder_.current();
  return {{"type", "state"},
          {"t", s.t_s},
          {"pos_m", s.position_m},
          {"speed_mps", s.speed_mps},
          {"phase", std::string(to_string(recorder_.phase()))},
          {"yellow_remaining_s", recorder_.yellow_remaining()},
          {"decided", recorder_.decided()}};
}

json Session::summary_message(const Episode& e) const {
  return {{"type", "summary"},
          {"session_id", id_},
          {"driver_id", e.driver_id},
          {"seed", e.scenario.seed},
          {"decision", e.decision ? json(std::string(to_string(*e.decision))) : json(nullptr)},
          {"decision_t_s", e.decision ? json(e.decision_t_s) : json(nullptr)},
          {"ran_red", e.ran_red},
          {"crossed_line_t_s", e.crossed_line_t_s ? json(*e.crossed_line_t_s) : json(nullptr)},
          {"ticks", e.samples.size() - 1}};
}

Episode Session::finish() {
  status_ = SessionStatus::Finished;
  return recorder_.finish();
}

SessionManager::SessionManager(ScenarioConfig defaults, std::string store_dir)
    : defaults_(std::move(defaults)), store_dir_(std::move(store_dir)) {
  defaults_.validate();
  std::filesystem::create_directories(store_dir_);
}

namespace {

bool valid_driver_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](unsigned char c) {
           return std::isalnum(c) || c == '_' || c == '-';
         });
}

}  // namespace

std::shared_ptr<Session> SessionManager::start(const std::string& driver_id, std::uint64_t seed,
                                               const std::optional<json>& config_override) {
  if (!valid_driver_id(driver_id)) {
    throw ConfigError("driver_id must be 1-64 characters of [A-Za-z0-9_-]");
  }
  ScenarioConfig cfg = defaults_;
  if (config_override) {
    json merged = to_json(defaults_);
    merged.merge_patch(*config_override);
    cfg = scenario_config_from_json(merged);
  }
  const Scenario sc = generate_scenario(seed, cfg);
  const std::string id = fmt::format("{}-{}", driver_id, seed);
  std::lock_guard lock(mu_);
  if (live_.count(id)) throw SessionConflict("session '" + id + "' is already running");
  auto s = std::make_shared<Session>(id, driver_id, sc);
  live_[id] = s;
  return s;
}

Episode SessionManager::finish(const std::shared_ptr<Session>& s) {
  Episode e = s->finish();
  {
    std::lock_guard lock(store_mu_);
    append_episode_jsonl(store_path(s->driver_id()), e);
  }
  std::lock_guard lock(mu_);
  live_.erase(s->id());
  return e;
}

void SessionManager::abort(const std::shared_ptr<Session>& s) {
  s->finish();
  std::lock_guard lock(mu_);
  live_.erase(s->id());
}

std::size_t SessionManager::live_sessions() const {
  std::lock_guard lock(mu_);
  return live_.size();
}

std::string SessionManager::store_path(const std::string& driver_id) const {
  return (std::filesystem::path(store_dir_) / (driver_id + ".jsonl")).string();
}

Episode replay_controls(const std::string& driver_id, const Scenario& scenario,
                        const ControlScript& script) {
  EpisodeRecorder rec(driver_id, scenario);
  ControlInput held;
  while (!rec.finished()) {
    const std::size_t i = rec.ticks();
    if (script.decision_tick && *script.decision_tick == i) rec.latch(script.decision);
    if (i < script.controls.size()) held = script.controls[i];
    rec.advance(accel_command(held, scenario.limits));
  }
  return rec.finish();
}

}  // namespace dzlab
