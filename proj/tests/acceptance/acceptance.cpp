// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include <fmt/format.h>

#include "dzlab/eval.hpp"
#include "dzlab/kinematics.hpp"
#include "dzlab/logistic.hpp"
#include "dzlab/persona.hpp"
#include "dzlab/server.hpp"
#include "dzlab/transformer.hpp"
#include "support/gradcheck.hpp"
#include "support/headless.hpp"
#include "support/oracles.hpp"

using namespace dzlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs > budget_s) {
    o.pass = false;
    o.detail += fmt::format("; over budget {:.0f}s", budget_s);
  }
  if (!o.pass) ++failures;
  fmt::print("{} {} ({:.1f}s) {}\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail);
  std::fflush(stdout);
}

const std::vector<Episode>& fleet_episodes() {
  static const std::vector<Episode> eps =
      simulate_fleet(load_personas(std::string(DZLAB_DATA_DIR) + "/personas/fleet.json"), 200, 1, {});
  return eps;
}

Outcome kinematics_oracle() {
  const KinematicLimits lim;
  Rng r(2024);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double v = r.uniform(0.5, 35.0), x = r.uniform(0.5, 200.0);
    worst = std::max(worst, std::abs(time_to_stop(v, lim) - oracle::numeric_time_to_stop(v, lim.b_max)));
    worst = std::max(worst, std::abs(time_to_clear(x, v, lim) - oracle::numeric_time_to_clear(x, v, lim.a_max)));
  }
  const ZoneBounds z = dz_bounds(20.0);
  const bool bounds = z.start_m == 110.0 && z.end_m == 50.0;
  return {worst < 1e-6 && bounds,
          fmt::format("max |dt| = {:.2e} s, bounds(20) = ({}, {})", worst, z.start_m, z.end_m)};
}

Outcome gradient_check() {
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0, expected = 0;
  const Batch b = oracle::tiny_batch(11, 4, 3);
  for (KeySource ks : {KeySource::Gated, KeySource::Additive, KeySource::Replicated}) {
    for (Variant v : {Variant::Personalized, Variant::Generic}) {
      const ModelParams p = oracle::jitter(init_params(v, oracle::tiny_hyper(ks), 12), 13);
      const auto res = oracle::check_transformer_gradients(p, b);
      checked += res.checked;
      expected += p.parameter_count();
      if (res.worst_rel_err > worst) {
        worst = res.worst_rel_err;
        where = res.worst_param;
      }
    }
  }
  Rng r(5);
  std::vector<LogisticFeatures> x;
  std::vector<int> y;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 40; ++i) {
    x.push_back({r.uniform(10, 30), r.uniform(0, 150), r.uniform(1, 6), r.uniform(3, 9), r.uniform(0, 1)});
    y.push_back(static_cast<int>(r.below(2)));
    rows.emplace_back(x.back().begin(), x.back().end());
  }
  LogisticModel m;
  m.scaler = fit_scaler(rows, 5);
  for (auto& w : m.weights) w = r.normal();
  m.intercept = r.normal();
  const auto lr = oracle::check_logistic_gradients(m, x, y, 1e-4);
  checked += lr.checked;
  expected += 6;
  if (lr.worst_rel_err > worst) {
    worst = lr.worst_rel_err;
    where = lr.worst_param;
  }
  return {checked == expected && worst < 1e-4,
          fmt::format("{} scalars, worst rel err {:.2e} at {}", checked, worst, where)};
}

Outcome structural_invariants() {
  const Dataset ds = build_dataset(group_by_driver(fleet_episodes()), kDefaultWindow, 1, 0.25);
  const Batch batch = make_batch(ds.test, ds.meta);
  double row_err = 0.0, mean_err = 0.0, var_err = 0.0;
  bool complementary = true;
  for (Variant v : {Variant::Personalized, Variant::Generic}) {
    ForwardTrace trace;
    const auto probs = forward(init_params(v, Hyper{}, 9), batch, &trace);
    for (const auto& a : trace.attention)
      for (int i = 0; i < a.rows(); ++i) row_err = std::max(row_err, std::abs(a.row(i).sum() - 1.0));
    for (const auto& l : trace.layer_norm) {
      for (int i = 0; i < l.rows(); ++i) {
        const double mu = l.row(i).mean();
        mean_err = std::max(mean_err, std::abs(mu));
        var_err = std::max(var_err, std::abs((l.row(i).array() - mu).square().mean() - 1.0));
      }
    }
    for (double p : probs) complementary = complementary && (1.0 - p) + p == 1.0;
  }
  Hyper h;
  h.epochs = 3;
  std::vector<Sample> subset(ds.train.begin(), ds.train.begin() + std::min<std::size_t>(200, ds.train.size()));
  const TrainResult a = train(subset, ds.meta, h, 21, Variant::Personalized);
  const TrainResult b = train(subset, ds.meta, h, 21, Variant::Personalized);
  const bool repro = a.params.tensors == b.params.tensors && a.loss_history == b.loss_history;
  return {row_err <= 1e-6 && mean_err <= 1e-6 && var_err <= 1e-4 && complementary && repro,
          fmt::format("row-sum err {:.1e}, LN mean {:.1e} var {:.1e}, complementary {}, reproducible {}",
                      row_err, mean_err, var_err, complementary, repro)};
}

Outcome logistic_sanity() {
  const auto train_set = oracle::separable_samples(1, 1000);
  const auto test_set = oracle::separable_samples(2, 1000);
  const LogisticModel m = logistic_train(train_set);
  const auto probs = logistic_predict(m, test_set);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) ok += (probs[i] >= 0.5) == (test_set[i].label == 1);
  const double acc = static_cast<double>(ok) / static_cast<double>(test_set.size());
  return {acc >= 0.99, fmt::format("test accuracy {:.1f}%", 100 * acc)};
}

Outcome personalization_gain() {
  CompareConfig cfg;
  const AccuracyReport r = summarize(compare_models(group_by_driver(fleet_episodes()), cfg));
  if (!r.failures.empty()) return {false, fmt::format("{} model failures", r.failures.size())};
  const double p = r.pooled(ModelKind::Personalized), g = r.pooled(ModelKind::Generic),
               l = r.pooled(ModelKind::Logistic);
  const bool ok = p >= g && g >= l && improvement_points(g, p) >= 2.0 && improvement_points(l, p) >= 5.0;
  return {ok, fmt::format("P.T. {:.1f}%  G.T. {:.1f}%  B.L.R. {:.1f}%  (+{:.1f} pp / +{:.1f} pp)", 100 * p,
                          100 * g, 100 * l, improvement_points(g, p), improvement_points(l, p))};
}

Outcome fleet_spread() {
  const BehaviorTable t = behavior_metrics(group_by_driver(fleet_episodes()));
  double lo = 1.0, hi = 0.0;
  std::string rates;
  for (const auto& row : t.drivers) {
    lo = std::min(lo, row.stats.pof_go);
    hi = std::max(hi, row.stats.pof_go);
    rates += fmt::format(" {}={:.1f}%", row.driver_id, 100 * row.stats.pof_go);
  }
  // Hand-made 10 episodes: 7 Go, 3 Stop, 2 red-light runs.
  std::vector<Episode> ten;
  for (int i = 0; i < 10; ++i) {
    Episode e = oracle::constant_speed_episode("hand", 60.0, 15.0, 1.0, 200, static_cast<std::uint64_t>(i));
    e.decision = i < 7 ? Decision::Go : Decision::Stop;
    e.decision_t_s = 1.5;
    e.ran_red = i < 2;
    ten.push_back(std::move(e));
  }
  const BehaviorTable h = behavior_metrics({{"hand", ten}});
  const bool exact = h.drivers.size() == 1 && h.drivers[0].stats.pof_go == 7.0 / 10.0 &&
                     h.drivers[0].stats.pof_rr == 2.0 / 10.0;
  return {t.drivers.size() == 4 && hi - lo >= 0.45 && exact,
          fmt::format("spread {:.1f} pp ({}), fixture exact {}", 100 * (hi - lo), rates.substr(1), exact)};
}

Outcome decision_timing_property() {
  const TimingSummary s = summarize_timing(decision_timing(fleet_episodes()));
  return {s.stops > 0 && s.goes > 0 && s.mean_refined_stop_s > s.mean_refined_go_s,
          fmt::format("stop {:.2f} s (n={}) vs go {:.2f} s (n={})", s.mean_refined_stop_s, s.stops,
                      s.mean_refined_go_s, s.goes)};
}

Outcome headless_equivalence() {
  const fs::path store = fs::temp_directory_path() / "dzlab_acceptance_store";
  fs::remove_all(store);
  ServerOptions o;
  o.port = 0;
  o.fast = true;
  o.store_dir = store.string();
  SessionServer server(o);
  const std::uint16_t port = server.start();
  std::size_t equal = 0, total = 0;
  {
    LineClient c("127.0.0.1", port);
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      const Decision d = seed % 2 ? Decision::Go : Decision::Stop;
      const auto run = oracle::drive_headless(c, "scripted", seed, d);
      ++total;
      if (!run.summary) continue;
      const Episode want = replay_controls("scripted", generate_scenario(seed, o.defaults), run.script);
      const auto stored = read_episodes_jsonl(server.sessions().store_path("scripted"));
      if (stored.size() == total && stored.back() == want) ++equal;
    }
  }
  server.stop();
  fs::remove_all(store);
  return {equal == total, fmt::format("{}/{} episodes identical to the offline rollout", equal, total)};
}

}  // namespace

int main() {
  criterion("kinematics-oracle", 10, kinematics_oracle);
  criterion("gradient-check", 60, gradient_check);
  criterion("structural-invariants", 0, structural_invariants);
  criterion("logistic-sanity", 0, logistic_sanity);
  criterion("personalization-gain", 300, personalization_gain);
  criterion("fleet-behavior-spread", 0, fleet_spread);
  criterion("decision-timing", 0, decision_timing_property);
  criterion("headless-session-equivalence", 0, headless_equivalence);
  fmt::print("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
