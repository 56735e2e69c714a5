#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "dzlab/dataset.hpp"
#include "dzlab/errors.hpp"
#include "dzlab/persona.hpp"
#include "support/oracles.hpp"

using namespace dzlab;
using doctest::Approx;

namespace {

std::map<std::string, std::vector<Episode>> small_fleet(std::size_t n = 40) {
  std::vector<PersonaProfile> ps(3);
  const double bias[] = {4.0, 0.5, -1.0};
  for (int i = 0; i < 3; ++i) {
    ps[i].name = "drv" + std::to_string(i);
    ps[i].go_bias = bias[i];
    ps[i].decision_gain = 6.0;
  }
  return group_by_driver(simulate_fleet(ps, n, 21, {}));
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dzlab_test_" + name)).string();
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("personal stats counting") {
  std::vector<Episode> eps;
  for (int i = 0; i < 4; ++i) {
    Episode e = oracle::constant_speed_episode("d", 100.0, 10.0, 1.0, 200, i);
    e.decision = i < 3 ? Decision::Go : Decision::Stop;
    e.decision_t_s = 1.5;
    eps.push_back(e);
  }
  CHECK(compute_personal_stats(eps).pof_go == 0.75);
}

TEST_CASE("personal stats of a single stop episode") {
  // Decision 0.8 s after onset at 1.0 s; the vehicle is at 50 m doing 16 m/s then.
  Episode e = oracle::constant_speed_episode("d", 50.0 + 16.0 * 1.8, 16.0, 1.0, 200);
  e.decision = Decision::Stop;
  e.decision_t_s = 1.8;
  for (const bool red : {false, true}) {
    e.ran_red = red;
    const PersonalStats s = compute_personal_stats({e});
    CHECK(s.pof_go == 0.0);
    CHECK(s.pof_rr == (red ? 1.0 : 0.0));
    CHECK(s.avg_spd_mps == 16.0);
    CHECK(s.avg_dts_m == Approx(50.0).epsilon(1e-12));
    CHECK(s.avg_yt_s == Approx(0.8).epsilon(1e-12));
  }
}

TEST_CASE("window of one row") {
  const Episode e = oracle::constant_speed_episode("d", 100.0, 20.0, 1.0, 200);
  const auto w = extract_window(e, 1);
  REQUIRE(w);
  REQUIRE(w->size() == 1);
  CHECK((*w)[0][0] == 20.0);
  CHECK((*w)[0][1] == Approx(80.0));
  CHECK((*w)[0][2] == 0.0);
}

TEST_CASE("constant-speed window arithmetic") {
  const Episode e = oracle::constant_speed_episode("d", 150.0, 20.0, 1.0, 200);
  const auto w = extract_window(e, 25);
  REQUIRE(w);
  REQUIRE(w->size() == 25);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK((*w)[i][2] == Approx(0.02 * i).epsilon(1e-12));
    if (i > 0) {
      CHECK((*w)[i - 1][1] - (*w)[i][1] == Approx(0.4).epsilon(1e-12));
      CHECK((*w)[i][2] > (*w)[i - 1][2]);
    }
  }
  CHECK((*w)[24][2] == Approx(0.48));
}

TEST_CASE("short episodes have no window") {
  const Episode e = oracle::constant_speed_episode("d", 150.0, 20.0, 1.0, 60);
  CHECK_FALSE(extract_window(e, 25));
  CHECK(extract_window(e, 11));
}

TEST_CASE("windows are causal") {
  const Episode e = oracle::constant_speed_episode("d", 150.0, 20.0, 1.0, 200);
  const auto base = *extract_window(e, 25);
  for (std::size_t cut = 0; cut < 25; ++cut) {
    Episode m = e;
    for (std::size_t k = e.yellow_onset_index() + cut + 1; k < m.samples.size(); ++k) {
      m.samples[k].speed_mps += 5.0;
      m.samples[k].position_m -= 3.0;
    }
    const auto w = *extract_window(m, 25);
    for (std::size_t i = 0; i <= cut; ++i) CHECK(w[i] == base[i]);
  }
}

TEST_CASE("zero holdout puts everything in train") {
  const auto fleet = small_fleet(20);
  const Dataset ds = build_dataset(fleet, 25, 1, 0.0);
  CHECK(ds.test.empty());
  CHECK(ds.train.size() == 60);
}

TEST_CASE("stratified split sizes") {
  std::vector<PersonaProfile> ps(4);
  for (int i = 0; i < 4; ++i) ps[i].name = "d" + std::to_string(i);
  const auto fleet = group_by_driver(simulate_fleet(ps, 200, 2, {}));
  const Dataset ds = build_dataset(fleet, 25, 5, 0.25);
  std::map<std::string, int> per;
  for (const auto& s : ds.test) ++per[s.driver_id];
  for (const auto& [d, n] : per) CHECK(n == 50);
  CHECK(ds.train.size() == 600);
}

TEST_CASE("split is deterministic and seed-dependent") {
  const auto fleet = small_fleet();
  auto members = [](const Dataset& ds) {
    std::vector<std::uint64_t> out;
    for (const auto& s : ds.test) out.push_back(s.episode_seed);
    return out;
  };
  CHECK(members(build_dataset(fleet, 25, 3, 0.25)) == members(build_dataset(fleet, 25, 3, 0.25)));
  CHECK(members(build_dataset(fleet, 25, 3, 0.25)) != members(build_dataset(fleet, 25, 4, 0.25)));
}

TEST_CASE("train and test are disjoint and cover every episode") {
  const auto fleet = small_fleet();
  const Dataset ds = build_dataset(fleet, 25, 9, 0.3);
  std::set<std::pair<std::string, std::uint64_t>> train, test;
  for (const auto& s : ds.train) train.insert({s.driver_id, s.episode_seed});
  for (const auto& s : ds.test) test.insert({s.driver_id, s.episode_seed});
  for (const auto& t : test) CHECK(train.count(t) == 0);
  CHECK(train.size() + test.size() == 120);
}

TEST_CASE("personal stats do not see the test split") {
  auto fleet = small_fleet();
  const Dataset ds = build_dataset(fleet, 25, 7, 0.25);
  std::set<std::pair<std::string, std::uint64_t>> test_keys;
  for (const auto& s : ds.test) test_keys.insert({s.driver_id, s.episode_seed});
  for (auto& [d, eps] : fleet) {
    for (auto& e : eps) {
      if (!test_keys.count({d, e.scenario.seed})) continue;
      e.decision = *e.decision == Decision::Go ? Decision::Stop : Decision::Go;
      e.ran_red = !e.ran_red;
    }
  }
  const Dataset changed = build_dataset(fleet, 25, 7, 0.25);
  CHECK(changed.meta.driver_stats == ds.meta.driver_stats);
  CHECK(changed.meta.common == ds.meta.common);
  CHECK(changed.meta.personal == ds.meta.personal);
}

TEST_CASE("normalized train features are standardized") {
  const Dataset ds = build_dataset(small_fleet(), 25, 1, 0.25);
  for (std::size_t k = 0; k < kCommonFeatures; ++k) {
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const auto& s : ds.train) {
      for (const auto& r : s.common_seq) {
        const double z = ds.meta.common.apply(k, r[k]);
        sum += z;
        sq += z * z;
        n += 1.0;
      }
    }
    CHECK(std::abs(sum / n) < 1e-9);
    CHECK(std::abs(std::sqrt(sq / n - (sum / n) * (sum / n)) - 1.0) < 1e-9);
  }
  for (std::size_t k = 0; k < kPersonalFeatures; ++k) {
    double sum = 0.0, sq = 0.0;
    for (const auto& s : ds.train) {
      const double z = ds.meta.personal.apply(k, s.personal[k]);
      sum += z;
      sq += z * z;
    }
    const double n = static_cast<double>(ds.train.size());
    CHECK(std::abs(sum / n) < 1e-9);
    CHECK(std::abs(std::sqrt(sq / n - (sum / n) * (sum / n)) - 1.0) < 1e-9);
  }
}

TEST_CASE("constant features get unit sd") {
  const FeatureScaler s = fit_scaler({{1.0, 2.0}, {1.0, 4.0}}, 2);
  CHECK(s.sd[0] == 1.0);
  CHECK(s.mean[0] == 1.0);
  CHECK(s.sd[1] == Approx(1.0));
}

TEST_CASE("single-class drivers warn, tiny drivers fail") {
  std::vector<PersonaProfile> ps(1);
  ps[0].name = "always";
  ps[0].go_bias = 80.0;
  const auto fleet = group_by_driver(simulate_fleet(ps, 12, 1, {}));
  const Dataset ds = build_dataset(fleet, 25, 1, 0.25);
  CHECK_FALSE(ds.warnings.empty());
  CHECK_THROWS_AS(build_dataset(group_by_driver(simulate_fleet(ps, 9, 1, {})), 25, 1, 0.25), ConfigError);
  CHECK_THROWS_AS(build_dataset(fleet, 25, 1, 1.0), ConfigError);
}

TEST_CASE("sample jsonl") {
  const std::string path = temp_path("samples.jsonl");
  write_jsonl(path, {});
  CHECK(read_jsonl(path).empty());

  Rng r(31);
  std::vector<Sample> samples;
  for (int i = 0; i < 1000; ++i) samples.push_back(oracle::random_sample(r, 1 + r.below(30)));
  write_jsonl(path, samples);
  CHECK(read_jsonl(path) == samples);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 7);
  try {
    read_jsonl(path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1000);
  }
  std::remove(path.c_str());
}

TEST_CASE("meta json round trip") {
  const Dataset ds = build_dataset(small_fleet(), 25, 1, 0.25);
  const DatasetMeta m = dataset_meta_from_json(nlohmann::json::parse(to_json(ds.meta).dump()));
  CHECK(m.window == ds.meta.window);
  CHECK(m.split_seed == ds.meta.split_seed);
  CHECK(m.common == ds.meta.common);
  CHECK(m.personal == ds.meta.personal);
  CHECK(m.driver_stats == ds.meta.driver_stats);
}

}
