#include "dzlab/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dzlab/errors.hpp"
#include "dzlab/rng.hpp"

namespace dzlab {

using Eigen::MatrixXd;

std::string_view to_string(Variant v) {
  return v == Variant::Personalized ? "personalized" : "generic";
}

Variant variant_from_string(std::string_view s) {
  if (s == "personalized") return Variant::Personalized;
  if (s == "generic") return Variant::Generic;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

std::string_view to_string(KeySource k) {
  switch (k) {
    case KeySource::Gated: return "gated";
    case KeySource::Replicated: return "replicated";
    case KeySource::Additive: return "additive";
  }
  return "gated";
}

KeySource key_source_from_string(std::string_view s) {
  if (s == "gated") return KeySource::Gated;
  if (s == "replicated") return KeySource::Replicated;
  if (s == "additive") return KeySource::Additive;
  throw ConfigError("unknown key source '" + std::string(s) + "'");
}

void Hyper::validate() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
    throw ConfigError("d_model must be a positive multiple of heads");
  }
  if (layers <= 0 || d_ff <= 0) throw ConfigError("layers and d_ff must be positive");
  if (dropout != 0.0) throw ConfigError("dropout is not supported");
  if (epochs < 0 || batch_size <= 0) throw ConfigError("invalid epochs or batch size");
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(),
                     [](const auto& kv) { return kv.second.allFinite(); });
}

namespace {

std::string layer_key(int l, const char* name) { return fmt::format("layer{}.{}", l, name); }

MatrixXd xavier(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatrixXd m(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen storage order.
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
  }
  return m;
}

}  // namespace

ModelParams init_params(Variant variant, const Hyper& hyper, std::uint64_t seed) {
  hyper.validate();
  ModelParams p;
  p.variant = variant;
  p.hyper = hyper;
  p.init_seed = seed;
  Rng rng(seed);
  const int d = hyper.d_model;
  auto& t = p.tensors;
  t["common_in.w"] = xavier(static_cast<int>(kCommonFeatures), d, rng);
  t["common_in.b"] = MatrixXd::Zero(1, d);
  if (variant == Variant::Personalized) {
    t["personal_in.w"] = xavier(static_cast<int>(kPersonalFeatures), d, rng);
    // A unit gate makes the gated key source start out as the generic one.
    t["personal_in.b"] = hyper.key_source == KeySource::Gated ? MatrixXd::Ones(1, d)
                                                              : MatrixXd::Zero(1, d);
  }
  for (int l = 0; l < hyper.layers; ++l) {
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      t[layer_key(l, w)] = xavier(d, d, rng);
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
      t[layer_key(l, b)] = MatrixXd::Zero(1, d);
    }
    t[layer_key(l, "ln1.gain")] = MatrixXd::Ones(1, d);
    t[layer_key(l, "ln1.shift")] = MatrixXd::Zero(1, d);
    t[layer_key(l, "ff.w1")] = xavier(d, hyper.d_ff, rng);
    t[layer_key(l, "ff.b1")] = MatrixXd::Zero(1, hyper.d_ff);
    t[layer_key(l, "ff.w2")] = xavier(hyper.d_ff, d, rng);
    t[layer_key(l, "ff.b2")] = MatrixXd::Zero(1, d);
    t[layer_key(l, "ln2.gain")] = MatrixXd::Ones(1, d);
    t[layer_key(l, "ln2.shift")] = MatrixXd::Zero(1, d);
  }
  t["head.w"] = xavier(d, 1, rng);
  t["head.b"] = MatrixXd::Zero(1, 1);
  return p;
}

MatrixXd positional_encoding(int rows, int d_model) {
  MatrixXd pe(rows, d_model);
  for (int pos = 0; pos < rows; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const int pair = i / 2;
      const double angle =
          pos / std::pow(10000.0, 2.0 * pair / static_cast<double>(d_model));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                 const DatasetMeta& meta) {
  Batch b;
  if (idx.empty()) return b;
  const auto w = static_cast<int>(samples[idx.front()].common_seq.size());
  b.window = w;
  b.common.resize(static_cast<Eigen::Index>(idx.size()) * w, kCommonFeatures);
  b.personal.resize(static_cast<Eigen::Index>(idx.size()), kPersonalFeatures);
  b.labels.reserve(idx.size());
  Eigen::Index row = 0;
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const Sample& s = samples[idx[n]];
    if (static_cast<int>(s.common_seq.size()) != w) throw ShapeError("make_batch: ragged windows");
    for (const auto& r : s.common_seq) {
      for (std::size_t k = 0; k < kCommonFeatures; ++k) {
        b.common(row, static_cast<Eigen::Index>(k)) = meta.common.apply(k, r[k]);
      }
      ++row;
    }
    for (std::size_t k = 0; k < kPersonalFeatures; ++k) {
      b.personal(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) =
          meta.personal.apply(k, s.personal[k]);
    }
    b.labels.push_back(s.label);
  }
  return b;
}

Batch make_batch(const std::vector<Sample>& samples, const DatasetMeta& meta) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(samples, idx, meta);
}

ag::Var forward_graph(ag::Tape& tape, const ModelParams& params, const Batch& batch,
                      std::map<std::string, ag::Var>* leaves, ForwardTrace* trace) {
  using namespace ag;
  const Hyper& h = params.hyper;
  const int w = batch.window;
  const int n = batch.size();
  if (n == 0 || w == 0) throw ShapeError("forward: empty batch");
  if (batch.common.cols() != static_cast<Eigen::Index>(kCommonFeatures) ||
      batch.common.rows() != static_cast<Eigen::Index>(n) * w) {
    throw ShapeError("forward: common input must be (B*W) x 3");
  }
  if (batch.personal.cols() != static_cast<Eigen::Index>(kPersonalFeatures) ||
      batch.personal.rows() != n) {
    throw ShapeError("forward: personal input must be B x 5");
  }

  std::map<std::string, Var> local;
  auto& P = leaves ? *leaves : local;
  for (const auto& [name, value] : params.tensors) P[name] = tape.leaf(value);
  auto param = [&](const std::string& name) { return P.at(name); };

  const MatrixXd pe = positional_encoding(w, h.d_model);
  MatrixXd pe_tiled(static_cast<Eigen::Index>(n) * w, h.d_model);
  for (int b = 0; b < n; ++b) pe_tiled.middleRows(static_cast<Eigen::Index>(b) * w, w) = pe;

  Var x = add(tape, add_row(tape, matmul(tape, tape.constant(batch.common), param("common_in.w")),
                            param("common_in.b")),
              tape.constant(std::move(pe_tiled)));

  Var personal_rows{};
  const bool personalized = params.variant == Variant::Personalized;
  if (personalized) {
    Var pe_row = add_row(tape, matmul(tape, tape.constant(batch.personal), param("personal_in.w")),
                         param("personal_in.b"));
    personal_rows = repeat_rows(tape, pe_row, w);
  }

  std::vector<MatrixXd>* attn_out = trace ? &trace->attention : nullptr;
  for (int l = 0; l < h.layers; ++l) {
    auto lp = [&](const char* name) { return param(layer_key(l, name)); };
    Var key_src = x;
    if (personalized) {
      switch (h.key_source) {
        case KeySource::Gated: key_src = mul(tape, x, personal_rows); break;
        case KeySource::Replicated: key_src = personal_rows; break;
        case KeySource::Additive: key_src = add(tape, x, personal_rows); break;
      }
    }
    Var q = add_row(tape, matmul(tape, x, lp("attn.wq")), lp("attn.bq"));
    Var k = add_row(tape, matmul(tape, key_src, lp("attn.wk")), lp("attn.bk"));
    Var v = add_row(tape, matmul(tape, x, lp("attn.wv")), lp("attn.bv"));
    Var a = attention(tape, q, k, v, h.heads, w, l, attn_out);
    Var o = add_row(tape, matmul(tape, a, lp("attn.wo")), lp("attn.bo"));
    x = layer_norm(tape, add(tape, x, o), lp("ln1.gain"), lp("ln1.shift"));
    if (trace) trace->layer_norm.push_back(tape.value(x));
    Var f = relu(tape, add_row(tape, matmul(tape, x, lp("ff.w1")), lp("ff.b1")));
    f = add_row(tape, matmul(tape, f, lp("ff.w2")), lp("ff.b2"));
    x = layer_norm(tape, add(tape, x, f), lp("ln2.gain"), lp("ln2.shift"));
    if (trace) trace->layer_norm.push_back(tape.value(x));
    if (!tape.value(x).allFinite()) {
      throw NumericError(fmt::format("non-finite activation after layer {}", l), l);
    }
  }
  Var pooled = mean_pool(tape, x, w);
  return add_row(tape, matmul(tape, pooled, param("head.w")), param("head.b"));
}

MatrixXd embed_common(const ModelParams& params, const MatrixXd& common_seq) {
  if (common_seq.cols() != static_cast<Eigen::Index>(kCommonFeatures)) {
    throw ShapeError("embed_common: input must have 3 columns");
  }
  MatrixXd out = common_seq * params.tensors.at("common_in.w");
  out.rowwise() += params.tensors.at("common_in.b").row(0);
  return out + positional_encoding(static_cast<int>(common_seq.rows()), params.hyper.d_model);
}

MatrixXd embed_personal(const ModelParams& params, const Eigen::VectorXd& personal, int window) {
  if (personal.size() != static_cast<Eigen::Index>(kPersonalFeatures)) {
    throw ShapeError("embed_personal: personal vector must have 5 entries");
  }
  const auto it = params.tensors.find("personal_in.w");
  if (it == params.tensors.end()) throw ShapeError("embed_personal: generic model has no personal projection");
  const Eigen::RowVectorXd row =
      personal.transpose() * it->second + params.tensors.at("personal_in.b").row(0);
  return row.replicate(window, 1);
}

std::vector<double> forward(const ModelParams& params, const Batch& batch, ForwardTrace* trace) {
  ag::Tape tape;
  const ag::Var logits = forward_graph(tape, params, batch, nullptr, trace);
  const MatrixXd& z = tape.value(logits);
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (!std::isfinite(z(i, 0))) throw NumericError("non-finite logit", params.hyper.layers);
    out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-z(i, 0)));
  }
  return out;
}

double loss(double prob, int label) {
  constexpr double kEps = 1e-12;
  const double p = std::clamp(prob, kEps, 1.0 - kEps);
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

double mean_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty()) throw ShapeError("mean_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) total += loss(probs[i], labels[i]);
  return total / static_cast<double>(probs.size());
}

Gradients grad(const ModelParams& params, const Batch& batch) {
  ag::Tape tape;
  std::map<std::string, ag::Var> leaves;
  const ag::Var logits = forward_graph(tape, params, batch, &leaves);
  const ag::Var l = ag::bce_with_logits(tape, logits, batch.labels);
  tape.backward(l);
  Gradients g;
  g.loss = tape.value(l)(0, 0);
  for (const auto& [name, var] : leaves) {
    const MatrixXd& gv = tape.grad(var);
    g.tensors[name] = gv.size() ? gv : MatrixXd::Zero(tape.value(var).rows(), tape.value(var).cols());
  }
  return g;
}

double batch_loss(const ModelParams& params, const Batch& batch) {
  ag::Tape tape;
  const ag::Var logits = forward_graph(tape, params, batch);
  return tape.value(ag::bce_with_logits(tape, logits, batch.labels))(0, 0);
}

TrainResult train(const std::vector<Sample>& train_set, const DatasetMeta& meta,
                  const Hyper& hyper, std::uint64_t seed, Variant variant) {
  if (train_set.empty()) throw ConfigError("train: empty training set");
  TrainResult result{init_params(variant, hyper, seed), {}};
  ModelParams& params = result.params;

  std::map<std::string, MatrixXd> m1, m2;
  for (const auto& [name, t] : params.tensors) {
    m1[name] = MatrixXd::Zero(t.rows(), t.cols());
    m2[name] = MatrixXd::Zero(t.rows(), t.cols());
  }
  Rng shuffle_rng = Rng::derive(seed, 0x5348554646ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(end));
      const Batch batch = make_batch(train_set, idx, meta);
      const Gradients g = grad(params, batch);
      if (!std::isfinite(g.loss)) {
        throw TrainingError(fmt::format("loss diverged in epoch {}", epoch), epoch);
      }
      epoch_loss += g.loss * static_cast<double>(idx.size());

      ++step;
      const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
      for (auto& [name, t] : params.tensors) {
        const MatrixXd& gt = g.tensors.at(name);
        MatrixXd& a = m1[name];
        MatrixXd& b = m2[name];
        a = hyper.beta1 * a + (1.0 - hyper.beta1) * gt;
        b = hyper.beta2 * b + (1.0 - hyper.beta2) * gt.cwiseProduct(gt);
        t.array() -= hyper.lr * (a.array() / bc1) / ((b.array() / bc2).sqrt() + hyper.adam_eps);
      }
    }
    const double mean = epoch_loss / static_cast<double>(order.size());
    if (!std::isfinite(mean)) {
      throw TrainingError(fmt::format("loss diverged in epoch {}", epoch), epoch);
    }
    result.loss_history.push_back(mean);
  }
  return result;
}

std::vector<double> predict(const ModelParams& params, const std::vector<Sample>& samples,
                            const DatasetMeta& meta) {
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto probs = forward(params, make_batch(samples, idx, meta));
    out.insert(out.end(), probs.begin(), probs.end());
  }
  return out;
}

}  // namespace dzlab
