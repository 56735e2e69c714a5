#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dzlab/episode.hpp"

namespace dzlab {

// The five per-driver statistics at the decision-making moment.
struct PersonalStats {
  double pof_go = 0.0;
  double pof_rr = 0.0;
  double avg_spd_mps = 0.0;
  double avg_dts_m = 0.0;
  double avg_yt_s = 0.0;

  std::array<double, 5> as_array() const {
    return {pof_go, pof_rr, avg_spd_mps, avg_dts_m, avg_yt_s};
  }
  friend bool operator==(const PersonalStats&, const PersonalStats&) = default;
};

inline constexpr std::size_t kCommonFeatures = 3;
inline constexpr std::size_t kPersonalFeatures = 5;
inline constexpr std::size_t kDefaultWindow = 25;

using CommonRow = std::array<double, kCommonFeatures>;  // speed, distance, yellow elapsed
using Window = std::vector<CommonRow>;

struct Sample {
  std::string driver_id;
  std::uint64_t episode_seed = 0;
  int label = 0;  // Stop = 0, Go = 1
  std::array<double, kPersonalFeatures> personal{};
  Window common_seq;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> sd;

  double apply(std::size_t k, double v) const { return (v - mean[k]) / sd[k]; }
  friend bool operator==(const FeatureScaler&, const FeatureScaler&) = default;
};

struct DatasetMeta {
  std::size_t window = kDefaultWindow;
  double dt_s = 1.0 / 50.0;
  std::uint64_t split_seed = 0;
  double holdout_fraction = 0.25;
  FeatureScaler common;    // 3 features
  FeatureScaler personal;  // 5 features
  std::map<std::string, PersonalStats> driver_stats;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  DatasetMeta meta;
  std::vector<std::string> warnings;
};

// Fractions use every episode; averages use only episodes with a decision.
PersonalStats compute_personal_stats(const std::vector<Episode>& episodes);

// First W ticks at or after yellow onset, or nullopt when the episode is too
// short. The window is fixed-length regardless of when the decision falls.
std::optional<Window> extract_window(const Episode& episode, std::size_t window);

// Stratified per-driver split. Statistics and scalers are fit on the train
// side only.
Dataset build_dataset(const std::map<std::string, std::vector<Episode>>& by_driver,
                      std::size_t window, std::uint64_t split_seed,
                      double holdout_fraction);

std::map<std::string, std::vector<Episode>> group_by_driver(const std::vector<Episode>& episodes);

// Mean and sd per column; constant columns get sd = 1.
FeatureScaler fit_scaler(const std::vector<std::vector<double>>& rows, std::size_t width);

nlohmann::json to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);
void write_jsonl(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_jsonl(const std::string& path);

nlohmann::json to_json(const PersonalStats& s);
PersonalStats personal_stats_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetMeta& m);
DatasetMeta dataset_meta_from_json(const nlohmann::json& j);

}  // namespace dzlab
