#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dzlab/dataset.hpp"
#include "dzlab/episode.hpp"
#include "dzlab/transformer.hpp"

namespace dzlab {

// ---- behavior table -------------------------------------------------------

struct BehaviorRow {
  std::string driver_id;
  std::size_t episodes = 0;
  PersonalStats stats;
};

struct BehaviorTable {
  std::vector<BehaviorRow> drivers;
  BehaviorRow fleet;
  std::vector<std::string> warnings;
};

// One row per driver with at least one episode plus a pooled fleet row.
BehaviorTable behavior_metrics(const std::map<std::string, std::vector<Episode>>& by_driver);
void render_behavior_text(std::ostream& out, const BehaviorTable& table);
void render_behavior_csv(std::ostream& out, const BehaviorTable& table);

// ---- decision timing ------------------------------------------------------

struct DecisionTimingRow {
  std::string driver_id;
  std::uint64_t episode_seed = 0;
  Decision decision = Decision::Stop;
  double latency_s = 0.0;           // decision time minus yellow onset
  double yellow_remaining_s = 0.0;  // at the decision moment
  double position_m = 0.0;
  double speed_mps = 0.0;
  double t_a_s = 0.0;               // time to line at a_max
  double t_b_s = 0.0;               // time to standstill at b_max
  // Decision-conditional time to stop-line: t_b for Stop, t_a for Go.
  double refined_time_s = 0.0;
};

// Skips episodes without a decision. State is taken at the decision tick.
std::vector<DecisionTimingRow> decision_timing(const std::vector<Episode>& episodes);
void render_decision_timing_csv(std::ostream& out, const std::vector<DecisionTimingRow>& rows);

struct TimingSummary {
  double mean_refined_stop_s = 0.0;
  double mean_refined_go_s = 0.0;
  double mean_latency_stop_s = 0.0;
  double mean_latency_go_s = 0.0;
  std::size_t stops = 0;
  std::size_t goes = 0;
};
TimingSummary summarize_timing(const std::vector<DecisionTimingRow>& rows);

// ---- model comparison -----------------------------------------------------

enum class ModelKind { Logistic, Generic, Personalized };
inline constexpr ModelKind kAllModels[] = {ModelKind::Logistic, ModelKind::Generic,
                                           ModelKind::Personalized};
std::string_view label(ModelKind k);  // "B.L.R.", "G.T.", "P.T."
std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

struct Prediction {
  std::uint64_t seed = 0;
  ModelKind model = ModelKind::Logistic;
  std::string driver_id;
  std::uint64_t episode_seed = 0;
  int label = 0;
  double prob_go = 0.5;

  int predicted() const { return prob_go >= 0.5 ? 1 : 0; }
};

struct ModelFailure {
  std::uint64_t seed = 0;
  ModelKind model = ModelKind::Logistic;
  std::string message;
};

struct PredictionDump {
  std::vector<Prediction> predictions;
  std::vector<ModelFailure> failures;
};

// Accuracies are always recomputed from a PredictionDump; improvements are
// derived at render time and never stored.
struct AccuracyReport {
  std::vector<std::string> drivers;
  std::vector<std::uint64_t> seeds;
  // model -> column ("R." for the pooled split, else driver id) -> mean over seeds
  std::map<ModelKind, std::map<std::string, double>> accuracy;
  std::vector<ModelFailure> failures;

  double pooled(ModelKind k) const { return accuracy.at(k).at(kPooledColumn); }
  static constexpr const char* kPooledColumn = "R.";
};

AccuracyReport summarize(const PredictionDump& dump);

double improvement_points(double base, double better);
double improvement_relative(double base, double better);

void render_accuracy_text(std::ostream& out, const AccuracyReport& report);
void render_accuracy_csv(std::ostream& out, const AccuracyReport& report);

void write_predictions_jsonl(const std::string& path, const PredictionDump& dump);
PredictionDump read_predictions_jsonl(const std::string& path);

struct CompareConfig {
  std::size_t window = kDefaultWindow;
  double holdout_fraction = 0.25;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  Hyper hyper;
  KinematicLimits limits;
};

// Trains and evaluates all three models on one prepared split.
void evaluate_split(const Dataset& ds, std::uint64_t seed, const CompareConfig& config,
                    PredictionDump& dump);

// For every seed: split the episodes with that seed, train all three models
// with it, and collect per-sample test predictions.
PredictionDump compare_models(const std::map<std::string, std::vector<Episode>>& by_driver,
                              const CompareConfig& config);

}  // namespace dzlab
