#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>

#include "dzlab/checkpoint.hpp"
#include "dzlab/dataset.hpp"
#include "dzlab/episode.hpp"
#include "dzlab/errors.hpp"
#include "dzlab/eval.hpp"
#include "dzlab/logistic.hpp"
#include "dzlab/persona.hpp"
#include "dzlab/scenario.hpp"
#include "dzlab/server.hpp"
#include "dzlab/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dzlab;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kConfigEnv = "DZLAB_CONFIG";

// Exit codes: 0 ok, 1 runtime failure, 2 usage error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

// Resolved run configuration: file (flag, then env var) merged with CLI
// overrides. Every section is fully populated so the manifest is complete.
struct RunConfig {
  ScenarioConfig scenario;
  Hyper hyper;
  std::size_t window = kDefaultWindow;
  double holdout_fraction = 0.25;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string source;  // path the file part came from, empty for built-ins

  json to_json() const {
    return {{"scenario", dzlab::to_json(scenario)},
            {"model", dzlab::to_json(hyper)},
            {"dataset", {{"window", window}, {"holdout_fraction", holdout_fraction}}},
            {"eval", {{"seeds", seeds}}}};
  }
};

RunConfig load_config(const std::string& flag_path) {
  RunConfig rc;
  std::string path = flag_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
  }
  if (path.empty()) return rc;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config '{}': {}", path, e.what()));
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "scenario" && key != "model" && key != "dataset" && key != "eval") {
      throw ConfigError(fmt::format("config '{}': unknown section '{}'", path, key));
    }
  }
  if (j.contains("scenario")) rc.scenario = scenario_config_from_json(j["scenario"]);
  if (j.contains("model")) rc.hyper = hyper_from_json(j["model"]);
  if (j.contains("dataset")) {
    rc.window = j["dataset"].value("window", rc.window);
    rc.holdout_fraction = j["dataset"].value("holdout_fraction", rc.holdout_fraction);
  }
  if (j.contains("eval")) rc.seeds = j["eval"].value("seeds", rc.seeds);
  rc.source = path;
  return rc;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const RunConfig& rc,
                    const json& args, const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::string>& inputs) {
  const json config = rc.to_json();
  json in = json::array();
  for (const auto& p : inputs) in.push_back({{"path", p}, {"sha256", sha256_hex(read_file(p))}});
  const json manifest{
      {"tool", "dzlab"},
      {"version", kVersion},
      {"versions",
       {{"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                              EIGEN_MINOR_VERSION)},
        {"fmt", FMT_VERSION},
        {"compiler", __VERSION__}}},
      {"subcommand", subcommand},
      {"arguments", args},
      {"config", config},
      {"config_source", rc.source},
      {"config_hash", sha256_hex(config.dump())},
      {"seeds", seeds},
      {"inputs", in},
      {"created_utc", utc_now()}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

fs::path ensure_dir(const std::string& p) {
  fs::create_directories(p);
  return fs::path(p);
}

// Files or directories; a directory contributes its *.jsonl files in name order.
std::vector<std::string> expand_episode_inputs(const std::vector<std::string>& paths) {
  std::vector<std::string> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl" &&
            e.path().filename() != "predictions.jsonl") {
          found.push_back(e.path().string());
        }
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw UsageError("input '" + p + "' does not exist");
    }
  }
  return files;
}

std::vector<Episode> load_episodes(const std::vector<std::string>& files) {
  std::vector<Episode> all;
  for (const auto& f : files) {
    auto part = read_episodes_jsonl(f);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

std::string fmt_pct(double x) { return fmt::format("{:.1f}%", 100.0 * x); }

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string personas;
  std::size_t episodes = 200;
  std::uint64_t seed = 1;
  std::string out;
  bool csv = false;
};

int run_simulate(const SimulateArgs& a, const RunConfig& rc) {
  const auto profiles = load_personas(a.personas);
  const auto episodes = simulate_fleet(profiles, a.episodes, a.seed, rc.scenario);
  const fs::path dir = ensure_dir(a.out);
  write_episodes_jsonl((dir / "episodes.jsonl").string(), episodes);
  if (a.csv) {
    std::ofstream csv(dir / "episodes.csv");
    write_episodes_csv(csv, episodes);
  }
  write_manifest(dir, "simulate", rc,
                 {{"personas", a.personas}, {"episodes", a.episodes}, {"seed", a.seed},
                  {"csv", a.csv}},
                 {a.seed}, {a.personas});
  fmt::print("simulated {} episodes for {} personas -> {}\n", episodes.size(), profiles.size(),
             (dir / "episodes.jsonl").string());
  return 0;
}

// ---------------------------------------------------------------- collect

struct CollectArgs {
  std::string serve = "127.0.0.1:8765";
  std::string store = "sessions";
  bool fast = false;
  bool verbose = false;
};

int run_collect(const CollectArgs& a, const RunConfig& rc) {
  const auto [host, port] = parse_address(a.serve);
  ServerOptions opt;
  opt.host = host;
  opt.port = port;
  opt.fast = a.fast;
  opt.store_dir = a.store;
  opt.defaults = rc.scenario;
  opt.verbose = a.verbose;
  const fs::path dir = ensure_dir(a.store);
  write_manifest(dir, "collect", rc, {{"serve", a.serve}, {"fast", a.fast}}, {}, {});
  SessionServer server(opt);
  const std::uint16_t bound = server.start();
  fmt::print("listening on {}:{}{}\n", host, bound, a.fast ? " (fast)" : "");
  std::fflush(stdout);
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string variant;
  std::vector<std::string> data;
  std::uint64_t seed = 1;
  std::string out;
};

int run_train(const TrainArgs& a, const RunConfig& rc) {
  const auto files = expand_episode_inputs(a.data);
  const auto by_driver = group_by_driver(load_episodes(files));
  const Dataset ds = build_dataset(by_driver, rc.window, a.seed, rc.holdout_fraction);
  for (const auto& w : ds.warnings) fmt::print(stderr, "warning: {}\n", w);
  const fs::path dir = ensure_dir(a.out);
  write_file(dir / "dataset_meta.json", dzlab::to_json(ds.meta).dump(2) + "\n");

  std::vector<double> probs;
  if (a.variant == "logistic") {
    const LogisticModel m = logistic_train(ds.train, rc.scenario.limits);
    write_file(dir / "model.json", dzlab::to_json(m).dump() + "\n");
    probs = logistic_predict(m, ds.test, rc.scenario.limits);
  } else {
    const Variant v = variant_from_string(a.variant);
    const TrainResult r = train(ds.train, ds.meta, rc.hyper, a.seed, v);
    save_checkpoint((dir / "model.json").string(), r.params);
    std::ofstream loss(dir / "loss_history.csv");
    write_loss_history_csv(loss, r.loss_history);
    probs = predict(r.params, ds.test, ds.meta);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) correct += (probs[i] >= 0.5) == (ds.test[i].label == 1);
  write_manifest(dir, "train", rc, {{"variant", a.variant}, {"data", a.data}, {"seed", a.seed}},
                 {a.seed}, files);
  fmt::print("{}: train {} / test {} samples, held-out accuracy {}\n", a.variant, ds.train.size(),
             ds.test.size(), ds.test.empty() ? "n/a" : fmt_pct(double(correct) / ds.test.size()));
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::vector<std::string> data;
  std::vector<std::string> models;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

// Re-evaluates trained model directories on the split they were trained with.
PredictionDump evaluate_models(const std::vector<std::string>& model_dirs,
                               const std::map<std::string, std::vector<Episode>>& by_driver,
                               const RunConfig& rc, std::vector<std::uint64_t>& seeds) {
  PredictionDump dump;
  for (const auto& d : model_dirs) {
    const fs::path dir(d);
    const DatasetMeta meta =
        dataset_meta_from_json(json::parse(read_file((dir / "dataset_meta.json").string())));
    const Dataset ds = build_dataset(by_driver, meta.window, meta.split_seed, meta.holdout_fraction);
    const json model = json::parse(read_file((dir / "model.json").string()));
    ModelKind kind;
    std::vector<double> probs;
    if (model.value("format", "") == "dzlab-logistic") {
      kind = ModelKind::Logistic;
      probs = logistic_predict(logistic_model_from_json(model), ds.test, rc.scenario.limits);
    } else {
      const ModelParams p = model_params_from_json(model);
      kind = p.variant == Variant::Generic ? ModelKind::Generic : ModelKind::Personalized;
      probs = predict(p, ds.test, meta);
    }
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
      const Sample& s = ds.test[i];
      dump.predictions.push_back({meta.split_seed, kind, s.driver_id, s.episode_seed, s.label, probs[i]});
    }
    if (std::find(seeds.begin(), seeds.end(), meta.split_seed) == seeds.end()) {
      seeds.push_back(meta.split_seed);
    }
  }
  return dump;
}

void print_accuracy(const AccuracyReport& report) {
  render_accuracy_text(std::cout, report);
  for (const auto& f : report.failures) {
    fmt::print(stderr, "warning: {} failed on seed {}: {}\n", label(f.model), f.seed, f.message);
  }
}

int run_eval(EvalArgs a, RunConfig rc) {
  const auto files = expand_episode_inputs(a.data);
  const auto by_driver = group_by_driver(load_episodes(files));
  PredictionDump dump;
  std::vector<std::uint64_t> seeds;
  if (!a.models.empty()) {
    dump = evaluate_models(a.models, by_driver, rc, seeds);
  } else {
    if (!a.seeds.empty()) rc.seeds = a.seeds;
    CompareConfig cc;
    cc.window = rc.window;
    cc.holdout_fraction = rc.holdout_fraction;
    cc.seeds = rc.seeds;
    cc.hyper = rc.hyper;
    cc.limits = rc.scenario.limits;
    dump = compare_models(by_driver, cc);
    seeds = rc.seeds;
  }
  const fs::path dir = ensure_dir(a.out);
  write_predictions_jsonl((dir / "predictions.jsonl").string(), dump);
  const AccuracyReport report = summarize(dump);
  {
    std::ofstream txt(dir / "accuracy.txt");
    render_accuracy_text(txt, report);
    std::ofstream csv(dir / "accuracy.csv");
    render_accuracy_csv(csv, report);
  }
  write_manifest(dir, "eval", rc, {{"data", a.data}, {"models", a.models}}, seeds, files);
  print_accuracy(report);
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> data;
  std::string predictions;
  std::string out;
};

int run_report(const ReportArgs& a, const RunConfig& rc) {
  const auto files = expand_episode_inputs(a.data);
  const auto episodes = load_episodes(files);
  const fs::path dir = ensure_dir(a.out);

  const BehaviorTable behavior = behavior_metrics(group_by_driver(episodes));
  {
    std::ofstream txt(dir / "behavior.txt");
    render_behavior_text(txt, behavior);
    std::ofstream csv(dir / "behavior.csv");
    render_behavior_csv(csv, behavior);
  }
  render_behavior_text(std::cout, behavior);
  for (const auto& w : behavior.warnings) fmt::print(stderr, "warning: {}\n", w);

  const auto timing = decision_timing(episodes);
  const TimingSummary ts = summarize_timing(timing);
  {
    std::ofstream csv(dir / "decision_timing.csv");
    render_decision_timing_csv(csv, timing);
    const std::string text = fmt::format(
        "decision  count  mean refined time-to-line [s]  mean latency [s]\n"
        "stop      {:5}  {:29.3f}  {:16.3f}\n"
        "go        {:5}  {:29.3f}  {:16.3f}\n",
        ts.stops, ts.mean_refined_stop_s, ts.mean_latency_stop_s, ts.goes, ts.mean_refined_go_s,
        ts.mean_latency_go_s);
    write_file(dir / "decision_timing.txt", text);
    fmt::print("\n{}", text);
  }

  std::vector<std::string> inputs = files;
  if (!a.predictions.empty()) {
    const AccuracyReport report = summarize(read_predictions_jsonl(a.predictions));
    std::ofstream txt(dir / "accuracy.txt");
    render_accuracy_text(txt, report);
    std::ofstream csv(dir / "accuracy.csv");
    render_accuracy_csv(csv, report);
    fmt::print("\n");
    print_accuracy(report);
    inputs.push_back(a.predictions);
  }
  write_manifest(dir, "report", rc, {{"data", a.data}, {"predictions", a.predictions}}, {}, inputs);
  fmt::print("\nreport written to {} (render plots with tools/render_plots.py {})\n", dir.string(),
             dir.string());
  return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string personas;
  std::vector<std::string> targets;  // name=rate
  std::size_t episodes = 1000;
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
  std::string out;
};

int run_sweep(const SweepArgs& a, const RunConfig& rc) {
  auto profiles = load_personas(a.personas);
  std::map<std::string, double> targets;
  for (const auto& t : a.targets) {
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError("--target expects NAME=RATE, got '" + t + "'");
    double rate = 0.0;
    try {
      rate = std::stod(t.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw UsageError("--target rate is not a number in '" + t + "'");
    }
    if (!(rate > 0.0 && rate < 1.0)) throw UsageError("--target rate must lie in (0, 1)");
    targets[t.substr(0, eq)] = rate;
  }
  for (const auto& [name, _] : targets) {
    if (std::none_of(profiles.begin(), profiles.end(), [&](const auto& p) { return p.name == name; })) {
      throw UsageError("--target names unknown persona '" + name + "'");
    }
  }
  json results = json::array();
  for (auto& p : profiles) {
    const auto it = targets.find(p.name);
    if (it == targets.end()) continue;
    const CalibrationResult r =
        calibrate_go_bias(p, it->second, a.episodes, a.seed, rc.scenario, a.tolerance);
    p.go_bias = r.go_bias;
    results.push_back({{"name", p.name},
                       {"target_pof_go", it->second},
                       {"go_bias", r.go_bias},
                       {"achieved_pof_go", r.achieved_pof_go},
                       {"iterations", r.iterations}});
    fmt::print("{}: go_bias {:.6f} -> PofGo {} (target {}, {} iterations)\n", p.name, r.go_bias,
               fmt_pct(r.achieved_pof_go), fmt_pct(it->second), r.iterations);
  }
  const fs::path dir = ensure_dir(a.out);
  save_personas((dir / "personas.json").string(), profiles);
  write_file(dir / "calibration.json", results.dump(2) + "\n");
  write_manifest(dir, "sweep", rc,
                 {{"personas", a.personas}, {"targets", a.targets}, {"episodes", a.episodes},
                  {"seed", a.seed}, {"tolerance", a.tolerance}},
                 {a.seed}, {a.personas});
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dilemma-zone laboratory: simulate, collect, train, evaluate"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);
  std::string config_path;
  app.add_option("--config", config_path,
                 fmt::format("JSON run config (default: ${})", kConfigEnv))
      ->check(CLI::ExistingFile);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "roll out persona episodes");
  simulate->add_option("--personas", sim.personas, "persona fixture JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--episodes", sim.episodes, "episodes per persona")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "base seed")->capture_default_str();
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_flag("--csv", sim.csv, "also write per-tick CSV");

  CollectArgs col;
  auto* collect = app.add_subcommand("collect", "run the live session service");
  collect->add_option("--serve", col.serve, "HOST:PORT to listen on (port 0 = any)")->capture_default_str();
  collect->add_option("--store", col.store, "episode store directory")->capture_default_str();
  collect->add_flag("--fast", col.fast, "lockstep mode: ticks advance on step messages");
  collect->add_flag("-v,--verbose", col.verbose, "log session events");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train one model variant");
  train_cmd->add_option("--variant", tr.variant)->required()->check(
      CLI::IsMember({"personalized", "generic", "logistic"}));
  train_cmd->add_option("--data", tr.data, "episode JSONL files or directories")->required();
  train_cmd->add_option("--seed", tr.seed, "split and init seed")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "output directory")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "compare models and write an accuracy report");
  eval->add_option("--data", ev.data, "episode JSONL files or directories")->required();
  eval->add_option("--models", ev.models, "trained model directories (default: train all per seed)")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--seeds", ev.seeds, "split seeds")->delimiter(',');
  eval->add_option("--out", ev.out, "output directory")->required();

  ReportArgs rep;
  auto* report = app.add_subcommand("report", "behavior, decision timing and accuracy tables");
  report->add_option("--data", rep.data, "episode JSONL files or directories")->required();
  report->add_option("--predictions", rep.predictions, "prediction dump from eval")
      ->check(CLI::ExistingFile);
  report->add_option("--out", rep.out, "output directory")->required();

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "calibrate persona go_bias to target go rates");
  sweep->add_option("--personas", sw.personas)->required()->check(CLI::ExistingFile);
  sweep->add_option("--target", sw.targets, "NAME=RATE, repeatable")->required();
  sweep->add_option("--episodes", sw.episodes, "episodes per evaluation")->capture_default_str();
  sweep->add_option("--seed", sw.seed)->capture_default_str();
  sweep->add_option("--tolerance", sw.tolerance)->capture_default_str();
  sweep->add_option("--out", sw.out, "output directory")->required();

  // Model and dataset overrides shared by train and eval.
  std::optional<int> epochs;
  std::optional<double> holdout;
  std::optional<std::size_t> window;
  std::optional<std::string> key_source;
  for (auto* sub : {train_cmd, eval}) {
    sub->add_option("--epochs", epochs);
    sub->add_option("--holdout", holdout)->check(CLI::Range(0.0, 1.0));
    sub->add_option("--window", window);
    sub->add_option("--key-source", key_source)->check(CLI::IsMember({"gated", "replicated", "additive"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    RunConfig rc = load_config(config_path);
    if (epochs) rc.hyper.epochs = *epochs;
    if (holdout) rc.holdout_fraction = *holdout;
    if (window) rc.window = *window;
    if (key_source) rc.hyper.key_source = key_source_from_string(*key_source);
    rc.hyper.validate();

    if (*simulate) return run_simulate(sim, rc);
    if (*collect) return run_collect(col, rc);
    if (*train_cmd) return run_train(tr, rc);
    if (*eval) return run_eval(ev, rc);
    if (*report) return run_report(rep, rc);
    if (*sweep) return run_sweep(sw, rc);
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return 1;
  } catch (const ParseError& e) {
    print_error("parse", e.what());
    return 1;
  } catch (const DomainError& e) {
    print_error("domain", e.what());
    return 1;
  } catch (const TrainingError& e) {
    print_error("training", e.what());
    return 1;
  } catch (const NumericError& e) {
    print_error("numeric", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
