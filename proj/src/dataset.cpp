#include "dzlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "dzlab/errors.hpp"
#include "dzlab/rng.hpp"

namespace dzlab {

using nlohmann::json;

PersonalStats compute_personal_stats(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw DomainError("compute_personal_stats: no episodes");
  const std::string& driver = episodes.front().driver_id;
  std::size_t go = 0, red = 0, decided = 0;
  double spd = 0.0, dts = 0.0, yt = 0.0;
  for (const auto& e : episodes) {
    if (e.driver_id != driver) {
      throw DomainError("compute_personal_stats: mixed drivers '" + driver +
                        "' and '" + e.driver_id + "'");
    }
    if (e.ran_red) ++red;
    if (!e.decision) continue;
    ++decided;
    if (*e.decision == Decision::Go) ++go;
    const TickSample& at = e.samples.at(e.decision_index());
    spd += at.speed_mps;
    dts += at.position_m;
    yt += e.decision_t_s - e.scenario.timing.yellow_onset();
  }
  const auto n = static_cast<double>(episodes.size());
  PersonalStats s;
  s.pof_go = static_cast<double>(go) / n;
  s.pof_rr = static_cast<double>(red) / n;
  if (decided > 0) {
    const auto d = static_cast<double>(decided);
    s.avg_spd_mps = spd / d;
    s.avg_dts_m = dts / d;
    s.avg_yt_s = yt / d;
  }
  return s;
}

std::optional<Window> extract_window(const Episode& episode, std::size_t window) {
  const std::size_t first = episode.yellow_onset_index();
  if (window == 0 || first + window > episode.samples.size()) return std::nullopt;
  const double onset = episode.scenario.timing.yellow_onset();
  Window out;
  out.reserve(window);
  for (std::size_t i = first; i < first + window; ++i) {
    const TickSample& s = episode.samples[i];
    out.push_back({s.speed_mps, s.position_m, s.t_s - onset});
  }
  return out;
}

std::map<std::string, std::vector<Episode>> group_by_driver(const std::vector<Episode>& episodes) {
  std::map<std::string, std::vector<Episode>> out;
  for (const auto& e : episodes) out[e.driver_id].push_back(e);
  return out;
}

FeatureScaler fit_scaler(const std::vector<std::vector<double>>& rows, std::size_t width) {
  FeatureScaler s;
  s.mean.assign(width, 0.0);
  s.sd.assign(width, 1.0);
  if (rows.empty()) return s;
  const auto n = static_cast<double>(rows.size());
  for (std::size_t k = 0; k < width; ++k) {
    double sum = 0.0;
    for (const auto& r : rows) sum += r[k];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[k] - mean) * (r[k] - mean);
    const double sd = std::sqrt(ss / n);
    s.mean[k] = mean;
    s.sd[k] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

namespace {

std::uint64_t driver_stream(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Dataset build_dataset(const std::map<std::string, std::vector<Episode>>& by_driver,
                      std::size_t window, std::uint64_t split_seed,
                      double holdout_fraction) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  }
  if (window == 0) throw ConfigError("window must be positive");
  Dataset ds;
  ds.meta.window = window;
  ds.meta.split_seed = split_seed;
  ds.meta.holdout_fraction = holdout_fraction;

  for (const auto& [driver, episodes] : by_driver) {
    if (episodes.size() < 10) {
      throw ConfigError(fmt::format("driver '{}' has {} episodes; at least 10 required",
                                    driver, episodes.size()));
    }
    ds.meta.dt_s = episodes.front().scenario.dt_s;

    std::vector<std::size_t> order(episodes.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(split_seed, driver_stream(driver));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    const auto n_test = static_cast<std::size_t>(
        std::llround(holdout_fraction * static_cast<double>(episodes.size())));
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + n_test);
    std::vector<std::size_t> train_idx(order.begin() + n_test, order.end());
    // Keep scenario order inside each side so the sample lists are stable.
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());

    std::vector<Episode> train_eps;
    for (auto i : train_idx) train_eps.push_back(episodes[i]);
    const PersonalStats stats = compute_personal_stats(train_eps);
    ds.meta.driver_stats[driver] = stats;
    if (stats.pof_go == 0.0 || stats.pof_go == 1.0) {
      ds.warnings.push_back(fmt::format("driver '{}' has a single decision class", driver));
    }

    auto emit = [&](std::size_t idx, std::vector<Sample>& dest) {
      const Episode& e = episodes[idx];
      if (!e.decision) {
        ds.warnings.push_back(fmt::format("driver '{}' episode {} has no decision; skipped",
                                          driver, e.scenario.seed));
        return;
      }
      auto win = extract_window(e, window);
      if (!win) {
        ds.warnings.push_back(fmt::format("driver '{}' episode {} shorter than window; skipped",
                                          driver, e.scenario.seed));
        return;
      }
      Sample s;
      s.driver_id = driver;
      s.episode_seed = e.scenario.seed;
      s.label = *e.decision == Decision::Go ? 1 : 0;
      s.personal = stats.as_array();
      s.common_seq = std::move(*win);
      dest.push_back(std::move(s));
    };
    for (auto i : train_idx) emit(i, ds.train);
    for (auto i : test_idx) emit(i, ds.test);
  }

  std::vector<std::vector<double>> common_rows, personal_rows;
  for (const auto& s : ds.train) {
    for (const auto& r : s.common_seq) common_rows.emplace_back(r.begin(), r.end());
    personal_rows.emplace_back(s.personal.begin(), s.personal.end());
  }
  ds.meta.common = fit_scaler(common_rows, kCommonFeatures);
  ds.meta.personal = fit_scaler(personal_rows, kPersonalFeatures);
  return ds;
}

json to_json(const Sample& s) {
  json seq = json::array();
  for (const auto& r : s.common_seq) seq.push_back({r[0], r[1], r[2]});
  return {{"driver_id", s.driver_id},
          {"episode_seed", s.episode_seed},
          {"label", s.label},
          {"personal", s.personal},
          {"common_seq", seq}};
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.driver_id = j.at("driver_id").get<std::string>();
  if (auto it = j.find("episode_seed"); it != j.end()) {
    s.episode_seed = it->get<std::uint64_t>();
  }
  s.label = j.at("label").get<int>();
  if (s.label != 0 && s.label != 1) throw ConfigError("label must be 0 or 1");
  const auto& personal = j.at("personal");
  if (personal.size() != kPersonalFeatures) throw ConfigError("personal must have 5 entries");
  for (std::size_t k = 0; k < kPersonalFeatures; ++k) s.personal[k] = personal[k].get<double>();
  for (const auto& row : j.at("common_seq")) {
    if (row.size() != kCommonFeatures) throw ConfigError("common_seq rows must have 3 entries");
    s.common_seq.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
  }
  return s;
}

void write_jsonl(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

std::vector<Sample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path, lineno, e.what()), lineno);
    }
  }
  return out;
}

json to_json(const PersonalStats& s) {
  return {{"pof_go", s.pof_go}, {"pof_rr", s.pof_rr}, {"avg_spd_mps", s.avg_spd_mps},
          {"avg_dts_m", s.avg_dts_m}, {"avg_yt_s", s.avg_yt_s}};
}

PersonalStats personal_stats_from_json(const json& j) {
  return {j.at("pof_go").get<double>(), j.at("pof_rr").get<double>(),
          j.at("avg_spd_mps").get<double>(), j.at("avg_dts_m").get<double>(),
          j.at("avg_yt_s").get<double>()};
}

json to_json(const DatasetMeta& m) {
  json stats = json::object();
  for (const auto& [driver, s] : m.driver_stats) stats[driver] = to_json(s);
  return {{"window", m.window},
          {"dt_s", m.dt_s},
          {"split_seed", m.split_seed},
          {"holdout_fraction", m.holdout_fraction},
          {"common_scaler", {{"mean", m.common.mean}, {"sd", m.common.sd}}},
          {"personal_scaler", {{"mean", m.personal.mean}, {"sd", m.personal.sd}}},
          {"driver_stats", stats}};
}

DatasetMeta dataset_meta_from_json(const json& j) {
  DatasetMeta m;
  m.window = j.at("window").get<std::size_t>();
  m.dt_s = j.at("dt_s").get<double>();
  m.split_seed = j.at("split_seed").get<std::uint64_t>();
  m.holdout_fraction = j.at("holdout_fraction").get<double>();
  m.common.mean = j.at("common_scaler").at("mean").get<std::vector<double>>();
  m.common.sd = j.at("common_scaler").at("sd").get<std::vector<double>>();
  m.personal.mean = j.at("personal_scaler").at("mean").get<std::vector<double>>();
  m.personal.sd = j.at("personal_scaler").at("sd").get<std::vector<double>>();
  for (const auto& [driver, s] : j.at("driver_stats").items()) {
    m.driver_stats[driver] = personal_stats_from_json(s);
  }
  return m;
}

}  // namespace dzlab
