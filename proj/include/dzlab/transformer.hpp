#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dzlab/autograd.hpp"
#include "dzlab/dataset.hpp"

namespace dzlab {

enum class Variant { Personalized, Generic };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

// How the personalized variant forms the attention-key source from the
// personal embedding P (replicated over positions) and the layer input X.
//   Gated:      X * P elementwise
//   Replicated: P alone (every key row identical)
//   Additive:   X + P
// With Replicated and Additive the personal term is constant across keys and
// cancels inside the softmax, so the output does not depend on it.
enum class KeySource { Gated, Replicated, Additive };

std::string_view to_string(KeySource k);
KeySource key_source_from_string(std::string_view s);

struct Hyper {
  int d_model = 32;
  int heads = 2;
  int layers = 2;
  int d_ff = 64;
  double dropout = 0.0;
  int epochs = 40;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  KeySource key_source = KeySource::Gated;

  void validate() const;
};

struct ModelParams {
  Variant variant = Variant::Personalized;
  Hyper hyper;
  std::uint64_t init_seed = 0;
  std::map<std::string, Eigen::MatrixXd> tensors;

  std::size_t parameter_count() const;
  bool all_finite() const;
};

ModelParams init_params(Variant variant, const Hyper& hyper, std::uint64_t seed);

// Sinusoidal encoding, rows = positions: even columns sin, odd columns cos.
Eigen::MatrixXd positional_encoding(int rows, int d_model);

// Normalized model inputs for a batch: stacked windows (B*W x 3) and
// personal vectors (B x 5).
struct Batch {
  Eigen::MatrixXd common;
  Eigen::MatrixXd personal;
  std::vector<int> labels;
  int window = 0;
  int size() const { return static_cast<int>(labels.size()); }
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                 const DatasetMeta& meta);
Batch make_batch(const std::vector<Sample>& samples, const DatasetMeta& meta);

// Optional diagnostics captured during a forward pass.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> attention;   // per layer, per sample, per head
  std::vector<Eigen::MatrixXd> layer_norm;  // every layer-norm output
};

// Builds the forward graph and returns the logits node (B x 1). `leaves`
// receives the tape node of every parameter.
ag::Var forward_graph(ag::Tape& tape, const ModelParams& params, const Batch& batch,
                      std::map<std::string, ag::Var>* leaves = nullptr,
                      ForwardTrace* trace = nullptr);

// Linear projection of a normalized window plus positional encoding (W x d).
Eigen::MatrixXd embed_common(const ModelParams& params, const Eigen::MatrixXd& common_seq);
// Linear projection of the personal vector replicated over W rows.
Eigen::MatrixXd embed_personal(const ModelParams& params, const Eigen::VectorXd& personal, int window);

// P(Go) for every sample of the batch.
std::vector<double> forward(const ModelParams& params, const Batch& batch,
                            ForwardTrace* trace = nullptr);

// Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12].
double loss(double prob, int label);
double mean_loss(const std::vector<double>& probs, const std::vector<int>& labels);

struct Gradients {
  double loss = 0.0;
  std::map<std::string, Eigen::MatrixXd> tensors;
};

Gradients grad(const ModelParams& params, const Batch& batch);
double batch_loss(const ModelParams& params, const Batch& batch);

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_history;  // mean training loss per epoch
};

// Adam, mini-batches in a seeded shuffle order, fixed reduction order.
TrainResult train(const std::vector<Sample>& train_set, const DatasetMeta& meta,
                  const Hyper& hyper, std::uint64_t seed, Variant variant);

std::vector<double> predict(const ModelParams& params, const std::vector<Sample>& samples,
                            const DatasetMeta& meta);

}  // namespace dzlab
