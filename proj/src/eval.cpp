#include "dzlab/eval.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "dzlab/errors.hpp"
#include "dzlab/logistic.hpp"

namespace dzlab {

using nlohmann::json;

BehaviorTable behavior_metrics(const std::map<std::string, std::vector<Episode>>& by_driver) {
  BehaviorTable table;
  std::vector<Episode> all;
  for (const auto& [driver, episodes] : by_driver) {
    if (episodes.empty()) {
      table.warnings.push_back(fmt::format("driver '{}' has no episodes; excluded", driver));
      continue;
    }
    table.drivers.push_back({driver, episodes.size(), compute_personal_stats(episodes)});
    for (Episode e : episodes) {
      e.driver_id = "fleet";
      all.push_back(std::move(e));
    }
  }
  table.fleet.driver_id = "fleet";
  table.fleet.episodes = all.size();
  if (!all.empty()) table.fleet.stats = compute_personal_stats(all);
  return table;
}

namespace {

void behavior_text_row(std::ostream& out, const BehaviorRow& r) {
  out << fmt::format("{:<12} {:>5} {:>7.1f}% {:>7.1f}% {:>8.1f}km/h {:>7.1f}m {:>6.2f}s\n",
                     r.driver_id, r.episodes, 100.0 * r.stats.pof_go, 100.0 * r.stats.pof_rr,
                     r.stats.avg_spd_mps * 3.6, r.stats.avg_dts_m, r.stats.avg_yt_s);
}

}  // namespace

void render_behavior_text(std::ostream& out, const BehaviorTable& table) {
  out << fmt::format("{:<12} {:>5} {:>8} {:>8} {:>12} {:>8} {:>7}\n", "Driver", "N", "PofGo",
                     "PofRR", "Avg.Spd", "Avg.DTS", "Avg.YT");
  for (const auto& r : table.drivers) behavior_text_row(out, r);
  behavior_text_row(out, table.fleet);
}

void render_behavior_csv(std::ostream& out, const BehaviorTable& table) {
  out << "driver,episodes,pof_go,pof_rr,avg_spd_mps,avg_dts_m,avg_yt_s\n";
  auto row = [&](const BehaviorRow& r) {
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.driver_id, r.episodes,
                       r.stats.pof_go, r.stats.pof_rr, r.stats.avg_spd_mps, r.stats.avg_dts_m,
                       r.stats.avg_yt_s);
  };
  for (const auto& r : table.drivers) row(r);
  row(table.fleet);
}

std::vector<DecisionTimingRow> decision_timing(const std::vector<Episode>& episodes) {
  std::vector<DecisionTimingRow> rows;
  for (const auto& e : episodes) {
    if (!e.decision) continue;
    const TickSample& at = e.samples.at(e.decision_index());
    const KinematicLimits& limits = e.scenario.limits;
    DecisionTimingRow r;
    r.driver_id = e.driver_id;
    r.episode_seed = e.scenario.seed;
    r.decision = *e.decision;
    r.latency_s = e.decision_t_s - e.scenario.timing.yellow_onset();
    r.yellow_remaining_s = std::max(0.0, e.scenario.timing.red_onset() - e.decision_t_s);
    r.position_m = at.position_m;
    r.speed_mps = at.speed_mps;
    r.t_a_s = time_to_clear(std::max(at.position_m, 0.0), at.speed_mps, limits);
    r.t_b_s = time_to_stop(at.speed_mps, limits);
    r.refined_time_s = r.decision == Decision::Stop ? r.t_b_s : r.t_a_s;
    rows.push_back(std::move(r));
  }
  return rows;
}

void render_decision_timing_csv(std::ostream& out, const std::vector<DecisionTimingRow>& rows) {
  out << "driver,episode_seed,decision,latency_s,yellow_remaining_s,position_m,speed_mps,"
         "t_a_s,t_b_s,refined_time_s\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f}\n", r.driver_id,
                       r.episode_seed, to_string(r.decision), r.latency_s, r.yellow_remaining_s,
                       r.position_m, r.speed_mps, r.t_a_s, r.t_b_s, r.refined_time_s);
  }
}

TimingSummary summarize_timing(const std::vector<DecisionTimingRow>& rows) {
  TimingSummary s;
  for (const auto& r : rows) {
    if (r.decision == Decision::Stop) {
      ++s.stops;
      s.mean_refined_stop_s += r.refined_time_s;
      s.mean_latency_stop_s += r.latency_s;
    } else {
      ++s.goes;
      s.mean_refined_go_s += r.refined_time_s;
      s.mean_latency_go_s += r.latency_s;
    }
  }
  if (s.stops) {
    s.mean_refined_stop_s /= static_cast<double>(s.stops);
    s.mean_latency_stop_s /= static_cast<double>(s.stops);
  }
  if (s.goes) {
    s.mean_refined_go_s /= static_cast<double>(s.goes);
    s.mean_latency_go_s /= static_cast<double>(s.goes);
  }
  return s;
}

std::string_view label(ModelKind k) {
  switch (k) {
    case ModelKind::Logistic: return "B.L.R.";
    case ModelKind::Generic: return "G.T.";
    case ModelKind::Personalized: return "P.T.";
  }
  return "?";
}

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Generic: return "generic";
    case ModelKind::Personalized: return "personalized";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "logistic") return ModelKind::Logistic;
  if (s == "generic") return ModelKind::Generic;
  if (s == "personalized") return ModelKind::Personalized;
  throw ConfigError("unknown model '" + std::string(s) + "'");
}

AccuracyReport summarize(const PredictionDump& dump) {
  AccuracyReport report;
  report.failures = dump.failures;
  std::set<std::string> drivers;
  std::set<std::uint64_t> seeds;
  // (model, seed, column) -> (correct, total)
  std::map<std::tuple<ModelKind, std::uint64_t, std::string>, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& p : dump.predictions) {
    drivers.insert(p.driver_id);
    seeds.insert(p.seed);
    const bool correct = p.predicted() == p.label;
    for (const std::string& col : {p.driver_id, std::string(AccuracyReport::kPooledColumn)}) {
      auto& c = counts[{p.model, p.seed, col}];
      c.first += correct ? 1 : 0;
      c.second += 1;
    }
  }
  report.drivers.assign(drivers.begin(), drivers.end());
  report.seeds.assign(seeds.begin(), seeds.end());
  // Per-seed accuracy first, then the mean over the seeds that produced it.
  std::map<std::pair<ModelKind, std::string>, std::pair<double, std::size_t>> sums;
  for (const auto& [key, c] : counts) {
    const auto& [model, seed, col] = key;
    auto& s = sums[{model, col}];
    s.first += static_cast<double>(c.first) / static_cast<double>(c.second);
    s.second += 1;
  }
  for (const auto& [key, s] : sums) {
    report.accuracy[key.first][key.second] = s.first / static_cast<double>(s.second);
  }
  return report;
}

double improvement_points(double base, double better) { return 100.0 * (better - base); }

double improvement_relative(double base, double better) {
  return base > 0.0 ? 100.0 * (better - base) / base : 0.0;
}

namespace {

std::vector<std::string> columns(const AccuracyReport& r) {
  std::vector<std::string> cols = r.drivers;
  cols.emplace_back(AccuracyReport::kPooledColumn);
  return cols;
}

double cell(const AccuracyReport& r, ModelKind k, const std::string& col) {
  const auto it = r.accuracy.find(k);
  if (it == r.accuracy.end()) return -1.0;
  const auto jt = it->second.find(col);
  return jt == it->second.end() ? -1.0 : jt->second;
}

}  // namespace

void render_accuracy_text(std::ostream& out, const AccuracyReport& report) {
  const auto cols = columns(report);
  out << fmt::format("{:<26}", "");
  for (const auto& c : cols) out << fmt::format("{:>12}", c);
  out << '\n';
  for (ModelKind k : kAllModels) {
    out << fmt::format("{:<26}", label(k));
    for (const auto& c : cols) {
      const double a = cell(report, k, c);
      out << (a < 0 ? fmt::format("{:>12}", "n/a") : fmt::format("{:>11.1f}%", 100.0 * a));
    }
    out << '\n';
  }
  auto improvement_rows = [&](ModelKind base, const char* name) {
    out << fmt::format("{:<26}", fmt::format("IMPRV. vs {} (pp)", name));
    for (const auto& c : cols) {
      out << fmt::format("{:>+12.1f}",
                         improvement_points(cell(report, base, c), cell(report, ModelKind::Personalized, c)));
    }
    out << '\n' << fmt::format("{:<26}", fmt::format("IMPRV. vs {} (rel %)", name));
    for (const auto& c : cols) {
      out << fmt::format("{:>+11.1f}%",
                         improvement_relative(cell(report, base, c), cell(report, ModelKind::Personalized, c)));
    }
    out << '\n';
  };
  improvement_rows(ModelKind::Logistic, label(ModelKind::Logistic).data());
  improvement_rows(ModelKind::Generic, label(ModelKind::Generic).data());
  out << fmt::format("seeds: {}\n", fmt::join(report.seeds, ", "));
  for (const auto& f : report.failures) {
    out << fmt::format("failed: {} seed {}: {}\n", label(f.model), f.seed, f.message);
  }
}

void render_accuracy_csv(std::ostream& out, const AccuracyReport& report) {
  const auto cols = columns(report);
  out << "row";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  for (ModelKind k : kAllModels) {
    out << label(k);
    for (const auto& c : cols) out << fmt::format(",{:.6f}", cell(report, k, c));
    out << '\n';
  }
  for (ModelKind base : {ModelKind::Logistic, ModelKind::Generic}) {
    out << "IMPRV_pp_vs_" << label(base);
    for (const auto& c : cols) {
      out << fmt::format(",{:.4f}", improvement_points(cell(report, base, c),
                                                       cell(report, ModelKind::Personalized, c)));
    }
    out << "\nIMPRV_rel_vs_" << label(base);
    for (const auto& c : cols) {
      out << fmt::format(",{:.4f}", improvement_relative(cell(report, base, c),
                                                         cell(report, ModelKind::Personalized, c)));
    }
    out << '\n';
  }
}

void write_predictions_jsonl(const std::string& path, const PredictionDump& dump) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (const auto& p : dump.predictions) {
    out << json{{"seed", p.seed},
                {"model", std::string(to_string(p.model))},
                {"driver_id", p.driver_id},
                {"episode_seed", p.episode_seed},
                {"label", p.label},
                {"prob_go", p.prob_go}}
               .dump()
        << '\n';
  }
  for (const auto& f : dump.failures) {
    out << json{{"seed", f.seed}, {"model", std::string(to_string(f.model))}, {"error", f.message}}.dump()
        << '\n';
  }
}

PredictionDump read_predictions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  PredictionDump dump;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("error")) {
        dump.failures.push_back({j.at("seed").get<std::uint64_t>(),
                                 model_kind_from_string(j.at("model").get<std::string>()),
                                 j.at("error").get<std::string>()});
        continue;
      }
      Prediction p;
      p.seed = j.at("seed").get<std::uint64_t>();
      p.model = model_kind_from_string(j.at("model").get<std::string>());
      p.driver_id = j.at("driver_id").get<std::string>();
      p.episode_seed = j.at("episode_seed").get<std::uint64_t>();
      p.label = j.at("label").get<int>();
      p.prob_go = j.at("prob_go").get<double>();
      dump.predictions.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path, lineno, e.what()), lineno);
    }
  }
  return dump;
}

void evaluate_split(const Dataset& ds, std::uint64_t seed, const CompareConfig& config,
                    PredictionDump& dump) {
  auto record = [&](ModelKind kind, const std::vector<double>& probs) {
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
      const Sample& s = ds.test[i];
      dump.predictions.push_back({seed, kind, s.driver_id, s.episode_seed, s.label, probs[i]});
    }
  };
  for (ModelKind kind : kAllModels) {
    try {
      if (kind == ModelKind::Logistic) {
        const LogisticModel m = logistic_train(ds.train, config.limits);
        record(kind, logistic_predict(m, ds.test, config.limits));
      } else {
        const Variant v = kind == ModelKind::Generic ? Variant::Generic : Variant::Personalized;
        const TrainResult r = train(ds.train, ds.meta, config.hyper, seed, v);
        record(kind, predict(r.params, ds.test, ds.meta));
      }
    } catch (const TrainingError& e) {
      dump.failures.push_back({seed, kind, e.what()});
    } catch (const NumericError& e) {
      dump.failures.push_back({seed, kind, e.what()});
    }
  }
}

PredictionDump compare_models(const std::map<std::string, std::vector<Episode>>& by_driver,
                              const CompareConfig& config) {
  // One task per seed; results are merged in seed order so the dump does not
  // depend on scheduling.
  std::vector<std::future<PredictionDump>> tasks;
  for (std::uint64_t seed : config.seeds) {
    tasks.push_back(std::async(std::launch::async, [&by_driver, &config, seed] {
      PredictionDump part;
      const Dataset ds = build_dataset(by_driver, config.window, seed, config.holdout_fraction);
      evaluate_split(ds, seed, config, part);
      return part;
    }));
  }
  PredictionDump dump;
  for (auto& t : tasks) {
    PredictionDump part = t.get();
    dump.predictions.insert(dump.predictions.end(), part.predictions.begin(), part.predictions.end());
    dump.failures.insert(dump.failures.end(), part.failures.begin(), part.failures.end());
  }
  return dump;
}

}  // namespace dzlab
