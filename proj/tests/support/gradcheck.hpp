#pragma once

// Finite-difference checks of every trainable parameter.

#include <string>
#include <vector>

#include "dzlab/logistic.hpp"
#include "dzlab/transformer.hpp"
#include "support/oracles.hpp"

namespace oracle {

struct GradCheckResult {
  std::size_t checked = 0;
  double worst_rel_err = 0.0;
  std::string worst_param;
};

inline GradCheckResult check_transformer_gradients(dzlab::ModelParams params, const dzlab::Batch& batch,
                                                   double h = 1e-5) {
  GradCheckResult res;
  const dzlab::Gradients g = dzlab::grad(params, batch);
  for (auto& [name, tensor] : params.tensors) {
    const Eigen::MatrixXd& analytic = g.tensors.at(name);
    for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
      for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
        const double numeric =
            central_difference([&] { return dzlab::batch_loss(params, batch); }, tensor(r, c), h);
        const double e = rel_err(analytic(r, c), numeric);
        ++res.checked;
        if (e > res.worst_rel_err) {
          res.worst_rel_err = e;
          res.worst_param = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
        }
      }
    }
  }
  return res;
}

inline GradCheckResult check_logistic_gradients(dzlab::LogisticModel m,
                                                const std::vector<dzlab::LogisticFeatures>& x,
                                                const std::vector<int>& y, double l2, double h = 1e-5) {
  GradCheckResult res;
  const auto analytic = dzlab::logistic_gradient(m, x, y, l2);
  auto f = [&] { return dzlab::logistic_objective(m, x, y, l2); };
  for (std::size_t k = 0; k <= dzlab::kLogisticFeatures; ++k) {
    double& slot = k < dzlab::kLogisticFeatures ? m.weights[k] : m.intercept;
    const double e = rel_err(analytic[k], central_difference(f, slot, h));
    ++res.checked;
    if (e > res.worst_rel_err) {
      res.worst_rel_err = e;
      res.worst_param = k < dzlab::kLogisticFeatures ? "w" + std::to_string(k) : "intercept";
    }
  }
  return res;
}

// Tiny random problem: d_model 4, window 3.
inline dzlab::Hyper tiny_hyper(dzlab::KeySource key_source = dzlab::KeySource::Gated) {
  dzlab::Hyper h;
  h.d_model = 4;
  h.heads = 2;
  h.layers = 2;
  h.d_ff = 8;
  h.key_source = key_source;
  return h;
}

inline dzlab::Batch tiny_batch(std::uint64_t seed, int samples = 4, int window = 3) {
  dzlab::Rng r(seed);
  std::vector<dzlab::Sample> s;
  for (int i = 0; i < samples; ++i) {
    dzlab::Sample x;
    x.label = i % 2;
    for (auto& p : x.personal) p = r.normal();
    for (int k = 0; k < window; ++k) x.common_seq.push_back({r.normal(), r.normal(), r.normal()});
    s.push_back(x);
  }
  return dzlab::make_batch(s, identity_meta(static_cast<std::size_t>(window)));
}

// Perturbs every tensor so that zero-initialized biases and unit gains are
// exercised away from their special values.
inline dzlab::ModelParams jitter(dzlab::ModelParams p, std::uint64_t seed, double scale = 0.3) {
  dzlab::Rng r(seed);
  for (auto& [_, t] : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += scale * r.normal();
  return p;
}

}  // namespace oracle
