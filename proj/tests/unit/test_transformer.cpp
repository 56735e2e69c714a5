#include <doctest.h>

#include <cmath>
#include <set>

#include "dzlab/errors.hpp"
#include "dzlab/persona.hpp"
#include "dzlab/transformer.hpp"
#include "support/gradcheck.hpp"

using namespace dzlab;
using Eigen::MatrixXd;

namespace {

std::set<std::string> names(const ModelParams& p) {
  std::set<std::string> out;
  for (const auto& [n, _] : p.tensors) out.insert(n);
  return out;
}

Dataset fixture_dataset(std::size_t n = 60) {
  std::vector<PersonaProfile> ps(2);
  ps[0].name = "bold";
  ps[0].go_bias = 6.0;
  ps[0].decision_gain = 6.0;
  ps[1].name = "careful";
  ps[1].go_bias = -1.0;
  ps[1].decision_gain = 6.0;
  return build_dataset(group_by_driver(simulate_fleet(ps, n, 3, {})), 10, 1, 0.25);
}

Hyper small_hyper(int epochs) {
  Hyper h;
  h.d_model = 8;
  h.heads = 2;
  h.layers = 1;
  h.d_ff = 16;
  h.epochs = epochs;
  h.batch_size = 16;
  return h;
}

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("positional encoding at position zero") {
  const MatrixXd pe = positional_encoding(1, 8);
  for (int i = 0; i < 8; ++i) CHECK(pe(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
  const MatrixXd pe3 = positional_encoding(3, 4);
  CHECK(pe3(2, 0) == doctest::Approx(std::sin(2.0)));
  CHECK(pe3(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)));
}

TEST_CASE("common embedding") {
  ModelParams p = init_params(Variant::Generic, oracle::tiny_hyper(), 1);
  const MatrixXd x = MatrixXd::Random(3, 3);
  ModelParams zero = p;
  zero.tensors["common_in.w"].setZero();
  CHECK((embed_common(zero, MatrixXd::Zero(3, 3)) - positional_encoding(3, 4)).norm() == 0.0);
  p = oracle::jitter(p, 2);
  const MatrixXd base = positional_encoding(3, 4) + p.tensors["common_in.b"].replicate(3, 1);
  const MatrixXd once = embed_common(p, x) - base;
  const MatrixXd twice = embed_common(p, 2.0 * x) - base;
  CHECK((twice - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("personal embedding is replicated") {
  const ModelParams p = oracle::jitter(init_params(Variant::Personalized, oracle::tiny_hyper(), 1), 3);
  Eigen::VectorXd v(5);
  v << 0.3, -1.0, 2.0, 0.5, 0.1;
  const MatrixXd e = embed_personal(p, v, 6);
  CHECK(e.rows() == 6);
  for (int i = 1; i < 6; ++i) CHECK(e.row(i) == e.row(0));
  const MatrixXd z = embed_personal(p, Eigen::VectorXd::Zero(5), 3);
  for (int i = 0; i < 3; ++i) CHECK(z.row(i) == p.tensors.at("personal_in.b").row(0));
  CHECK_THROWS_AS(embed_personal(init_params(Variant::Generic, oracle::tiny_hyper(), 1), v, 3), ShapeError);
}

TEST_CASE("drivers with equal statistics are indistinguishable") {
  const ModelParams p = oracle::jitter(init_params(Variant::Personalized, oracle::tiny_hyper(), 4), 5);
  Batch b = oracle::tiny_batch(6, 2);
  b.common.middleRows(3, 3) = b.common.topRows(3);
  b.personal.row(1) = b.personal.row(0);
  const auto probs = forward(p, b);
  CHECK(probs[0] == probs[1]);
  b.personal(1, 0) += 0.5;
  CHECK(forward(p, b)[0] != forward(p, b)[1]);
}

TEST_CASE("parameter shapes differ only by the personal projection") {
  for (KeySource ks : {KeySource::Gated, KeySource::Replicated, KeySource::Additive}) {
    const Hyper h = oracle::tiny_hyper(ks);
    const ModelParams pers = init_params(Variant::Personalized, h, 1);
    const ModelParams gen = init_params(Variant::Generic, h, 1);
    std::set<std::string> extra;
    for (const auto& n : names(pers))
      if (!gen.tensors.count(n)) extra.insert(n);
    CHECK(extra == std::set<std::string>{"personal_in.b", "personal_in.w"});
    for (const auto& [n, t] : gen.tensors) {
      CHECK(pers.tensors.at(n).rows() == t.rows());
      CHECK(pers.tensors.at(n).cols() == t.cols());
    }
    CHECK(pers.tensors.at("personal_in.w").rows() == 5);
    CHECK(gen.tensors.at("common_in.w").rows() == 3);
  }
}

TEST_CASE("attention rows and layer norm statistics") {
  const Dataset ds = fixture_dataset();
  for (Variant v : {Variant::Personalized, Variant::Generic}) {
    const ModelParams p = init_params(v, Hyper{}, 9);
    ForwardTrace trace;
    forward(p, make_batch(ds.test, ds.meta), &trace);
    REQUIRE(trace.attention.size() == ds.test.size() * 2 * 2);
    for (const auto& m : trace.attention)
      for (int i = 0; i < m.rows(); ++i) CHECK(std::abs(m.row(i).sum() - 1.0) < 1e-6);
    REQUIRE(trace.layer_norm.size() == 4);
    for (const auto& m : trace.layer_norm) {
      for (int i = 0; i < m.rows(); ++i) {
        const double mean = m.row(i).mean();
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs((m.row(i).array() - mean).square().mean() - 1.0) < 1e-4);
      }
    }
  }
}

TEST_CASE("replicated personal keys flatten attention") {
  // The literal key construction: identical keys, so every weight is 1/W.
  const ModelParams p = oracle::jitter(init_params(Variant::Personalized, oracle::tiny_hyper(KeySource::Replicated), 2), 3);
  ForwardTrace trace;
  forward(p, oracle::tiny_batch(4), &trace);
  for (const auto& m : trace.attention) CHECK((m.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("zero head gives even odds") {
  ModelParams p = oracle::jitter(init_params(Variant::Personalized, oracle::tiny_hyper(), 1), 2);
  p.tensors["head.w"].setZero();
  p.tensors["head.b"].setZero();
  for (double prob : forward(p, oracle::tiny_batch(5, 6))) CHECK(prob == 0.5);
}

TEST_CASE("stop and go probabilities are complementary") {
  const ModelParams p = oracle::jitter(init_params(Variant::Generic, oracle::tiny_hyper(), 1), 7, 1.0);
  for (double prob : forward(p, oracle::tiny_batch(8, 50))) {
    CHECK(prob >= 0.0);
    CHECK(prob <= 1.0);
    CHECK((1.0 - prob) + prob == 1.0);
  }
}

TEST_CASE("row order matters") {
  const ModelParams p = oracle::jitter(init_params(Variant::Generic, oracle::tiny_hyper(), 1), 2);
  Batch b = oracle::tiny_batch(3, 1);
  const double before = forward(p, b)[0];
  b.common.row(0).swap(b.common.row(2));
  CHECK(forward(p, b)[0] != before);
}

TEST_CASE("loss values") {
  CHECK(loss(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(loss(0.5, 0) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(loss(1.0 - 1e-12, 1) == doctest::Approx(-std::log1p(-1e-12)).epsilon(1e-3));
  CHECK(loss(0.0, 1) == doctest::Approx(-std::log(1e-12)));
  CHECK(std::isfinite(loss(1.0, 0)));
}

TEST_CASE("finite-difference gradients, tiny model") {
  const Batch b = oracle::tiny_batch(11);
  for (Variant v : {Variant::Personalized, Variant::Generic}) {
    const ModelParams p = oracle::jitter(init_params(v, oracle::tiny_hyper(), 12), 13);
    const auto res = oracle::check_transformer_gradients(p, b);
    CHECK(res.checked == p.parameter_count());
    INFO("worst: " << res.worst_param);
    CHECK(res.worst_rel_err < 1e-4);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Dataset ds = fixture_dataset(20);
  Hyper h = small_hyper(3);
  h.lr = 0.0;
  const TrainResult r = train(ds.train, ds.meta, h, 5, Variant::Personalized);
  const ModelParams init = init_params(Variant::Personalized, h, 5);
  for (const auto& [n, t] : init.tensors) CHECK(r.params.tensors.at(n) == t);
}

TEST_CASE("a single sample is memorized") {
  const Dataset ds = fixture_dataset(20);
  const std::vector<Sample> one{ds.train.front()};
  Hyper h;
  h.epochs = 500;
  for (Variant v : {Variant::Personalized, Variant::Generic}) {
    const TrainResult r = train(one, ds.meta, h, 1, v);
    CHECK(r.loss_history.back() < 1e-3);
  }
}

TEST_CASE("training is bit-reproducible and reduces the loss") {
  const Dataset ds = fixture_dataset();
  const Hyper h = small_hyper(8);
  const TrainResult a = train(ds.train, ds.meta, h, 21, Variant::Personalized);
  const TrainResult b = train(ds.train, ds.meta, h, 21, Variant::Personalized);
  CHECK(a.params.tensors == b.params.tensors);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.loss_history.back() < a.loss_history.front());
  const TrainResult c = train(ds.train, ds.meta, h, 22, Variant::Personalized);
  CHECK_FALSE(c.params.tensors == a.params.tensors);
}

TEST_CASE("predict matches batched forward") {
  const Dataset ds = fixture_dataset();
  const ModelParams p = init_params(Variant::Personalized, small_hyper(1), 4);
  const auto a = predict(p, ds.test, ds.meta);
  const auto b = forward(p, make_batch(ds.test, ds.meta));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("shape errors") {
  const ModelParams p = init_params(Variant::Generic, oracle::tiny_hyper(), 1);
  Batch b = oracle::tiny_batch(1);
  b.common.conservativeResize(b.common.rows() - 1, Eigen::NoChange);
  CHECK_THROWS_AS(forward(p, b), ShapeError);
  Hyper bad = oracle::tiny_hyper();
  bad.heads = 3;
  CHECK_THROWS_AS(init_params(Variant::Generic, bad, 1), ConfigError);
}

}
