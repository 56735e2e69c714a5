#pragma once

#include <array>
#include <vector>

#include "dzlab/dataset.hpp"
#include "dzlab/kinematics.hpp"

namespace dzlab {

inline constexpr std::size_t kLogisticFeatures = 5;
using LogisticFeatures = std::array<double, kLogisticFeatures>;

// (v0, x, t_a, t_b, yellow_elapsed) at the first tick of the window.
LogisticFeatures logistic_features(const Sample& s, const KinematicLimits& limits = {});

struct LogisticModel {
  std::array<double, kLogisticFeatures> weights{};
  double intercept = 0.0;
  FeatureScaler scaler;  // standardization fit at training time

  double predict(const LogisticFeatures& f) const;
};

struct LogisticOptions {
  double l2 = 1e-4;
  double lr = 0.5;
  int max_iter = 5000;
  double grad_tol = 1e-9;
};

// Regularized mean negative log-likelihood on standardized features.
double logistic_objective(const LogisticModel& m, const std::vector<LogisticFeatures>& x,
                          const std::vector<int>& y, double l2);
// Gradient of logistic_objective: weights followed by the intercept.
std::array<double, kLogisticFeatures + 1> logistic_gradient(
    const LogisticModel& m, const std::vector<LogisticFeatures>& x,
    const std::vector<int>& y, double l2);

LogisticModel logistic_fit(const std::vector<LogisticFeatures>& x, const std::vector<int>& y,
                           const LogisticOptions& options = {});
LogisticModel logistic_train(const std::vector<Sample>& train_set,
                             const KinematicLimits& limits = {},
                             const LogisticOptions& options = {});
double logistic_predict(const LogisticModel& m, const LogisticFeatures& f);
std::vector<double> logistic_predict(const LogisticModel& m, const std::vector<Sample>& samples,
                                     const KinematicLimits& limits = {});

}  // namespace dzlab
