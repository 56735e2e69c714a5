#include "dzlab/episode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "dzlab/errors.hpp"

namespace dzlab {

using nlohmann::json;

std::string_view to_string(Decision d) {
  return d == Decision::Go ? "go" : "stop";
}

Decision decision_from_string(std::string_view s) {
  if (s == "go") return Decision::Go;
  if (s == "stop") return Decision::Stop;
  throw ConfigError("unknown decision '" + std::string(s) + "'");
}

std::size_t Episode::decision_index() const {
  const double dt = scenario.dt_s;
  auto idx = static_cast<std::size_t>(std::ceil(decision_t_s / dt - 1e-9));
  return std::min(idx, samples.empty() ? 0 : samples.size() - 1);
}

std::size_t Episode::yellow_onset_index() const {
  const double onset = scenario.timing.yellow_onset();
  auto it = std::find_if(samples.begin(), samples.end(), [&](const TickSample& s) {
    return s.t_s >= onset - 1e-9;
  });
  return static_cast<std::size_t>(it - samples.begin());
}

bool compute_ran_red(const Episode& e) {
  const double red = e.scenario.timing.red_onset();
  if (e.crossed_line_t_s && *e.crossed_line_t_s >= red) return true;
  if (e.decision == Decision::Stop && !e.samples.empty()) {
    const auto& last = e.samples.back();
    if (last.speed_mps == 0.0 && last.position_m < 0.0) return true;
  }
  return false;
}

EpisodeRecorder::EpisodeRecorder(std::string driver_id, const Scenario& scenario)
    : state_(scenario.initial) {
  episode_.driver_id = std::move(driver_id);
  episode_.scenario = scenario;
  episode_.samples.push_back({state_.t_s, state_.position_m, state_.speed_mps,
                              state_.accel_mps2, phase()});
}

Phase EpisodeRecorder::phase() const {
  return phase_at(episode_.scenario.timing, state_.t_s);
}

double EpisodeRecorder::yellow_remaining() const {
  return yellow_remaining_at(episode_.scenario.timing, state_.t_s);
}

bool EpisodeRecorder::latch(Decision d, std::optional<double> at) {
  if (episode_.decision) return false;
  episode_.decision = d;
  episode_.decision_t_s = at.value_or(state_.t_s);
  return true;
}

void EpisodeRecorder::advance(double accel_cmd) {
  if (finished_) return;
  const VehicleState prev = state_;
  // Tick time is rebuilt from the index so that long episodes do not
  // accumulate summation drift.
  state_ = step(prev, accel_cmd, episode_.scenario.dt_s, episode_.scenario.limits);
  state_.t_s = static_cast<double>(episode_.samples.size()) * episode_.scenario.dt_s;

  if (!episode_.crossed_line_t_s && prev.position_m >= 0.0 && state_.position_m < 0.0) {
    const auto tau = time_to_travel(prev.position_m, prev.speed_mps, state_.accel_mps2);
    episode_.crossed_line_t_s = prev.t_s + tau.value_or(episode_.scenario.dt_s);
  }
  episode_.samples.push_back({state_.t_s, state_.position_m, state_.speed_mps,
                              state_.accel_mps2, phase()});

  const bool standstill = state_.speed_mps == 0.0;
  const bool cleared = episode_.crossed_line_t_s &&
                       state_.t_s >= *episode_.crossed_line_t_s + kPostCrossingS;
  if (standstill || cleared || state_.t_s >= kMaxEpisodeS) finished_ = true;
}

Episode EpisodeRecorder::finish() {
  finished_ = true;
  episode_.ran_red = compute_ran_red(episode_);
  return episode_;
}

json to_json(const Episode& e) {
  json t = json::array(), pos = json::array(), spd = json::array(),
       acc = json::array(), ph = json::array();
  for (const auto& s : e.samples) {
    t.push_back(s.t_s);
    pos.push_back(s.position_m);
    spd.push_back(s.speed_mps);
    acc.push_back(s.accel_mps2);
    ph.push_back(to_string(s.phase));
  }
  json j;
  j["driver_id"] = e.driver_id;
  j["scenario"] = to_json(e.scenario);
  j["decision"] = e.decision ? json(to_string(*e.decision)) : json(nullptr);
  j["decision_t_s"] = e.decision ? json(e.decision_t_s) : json(nullptr);
  j["ran_red"] = e.ran_red;
  j["crossed_line_t_s"] = e.crossed_line_t_s ? json(*e.crossed_line_t_s) : json(nullptr);
  j["samples"] = {{"t_s", t}, {"position_m", pos}, {"speed_mps", spd},
                  {"accel_mps2", acc}, {"phase", ph}};
  return j;
}

Episode episode_from_json(const json& j) {
  Episode e;
  try {
    e.driver_id = j.at("driver_id").get<std::string>();
    e.scenario = scenario_from_json(j.at("scenario"));
    if (!j.at("decision").is_null()) {
      e.decision = decision_from_string(j.at("decision").get<std::string>());
      e.decision_t_s = j.at("decision_t_s").get<double>();
    }
    e.ran_red = j.at("ran_red").get<bool>();
    if (!j.at("crossed_line_t_s").is_null()) {
      e.crossed_line_t_s = j.at("crossed_line_t_s").get<double>();
    }
    const auto& s = j.at("samples");
    const auto& t = s.at("t_s");
    const auto& pos = s.at("position_m");
    const auto& spd = s.at("speed_mps");
    const auto& acc = s.at("accel_mps2");
    const auto& ph = s.at("phase");
    const std::size_t n = t.size();
    if (pos.size() != n || spd.size() != n || acc.size() != n || ph.size() != n) {
      throw ConfigError("sample columns differ in length");
    }
    e.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      e.samples.push_back({t[i].get<double>(), pos[i].get<double>(),
                           spd[i].get<double>(), acc[i].get<double>(),
                           phase_from_string(ph[i].get<std::string>())});
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("episode schema: ") + ex.what());
  }
  for (std::size_t i = 1; i < e.samples.size(); ++i) {
    const double gap = e.samples[i].t_s - e.samples[i - 1].t_s;
    if (!(gap > 0.0) || std::abs(gap - e.scenario.dt_s) > 1e-6) {
      throw ConfigError(fmt::format("episode schema: sample {} breaks dt spacing", i));
    }
  }
  if (e.decision && e.decision_t_s < e.scenario.timing.yellow_onset() - 1e-9) {
    throw ConfigError("episode schema: decision before yellow onset");
  }
  return e;
}

void write_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (const auto& e : episodes) out << to_json(e).dump() << '\n';
}

void append_episode_jsonl(const std::string& path, const Episode& episode) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot append to '" + path + "'");
  out << to_json(episode).dump() << '\n';
  out.flush();
}

std::vector<Episode> read_episodes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(json::parse(line)));
    } catch (const std::exception& ex) {
      throw ParseError(fmt::format("{}:{}: {}", path, lineno, ex.what()), lineno);
    }
  }
  return out;
}

void write_episodes_csv(std::ostream& out, const std::vector<Episode>& episodes) {
  out << "driver_id,seed,tick,t_s,position_m,speed_mps,accel_mps2,phase,decision\n";
  for (const auto& e : episodes) {
    const char* decision = e.decision ? to_string(*e.decision).data() : "";
    for (std::size_t i = 0; i < e.samples.size(); ++i) {
      const auto& s = e.samples[i];
      out << fmt::format("{},{},{},{:.2f},{:.6f},{:.6f},{:.4f},{},{}\n", e.driver_id,
                         e.scenario.seed, i, s.t_s, s.position_m, s.speed_mps,
                         s.accel_mps2, to_string(s.phase), decision);
    }
  }
}

}  // namespace dzlab
