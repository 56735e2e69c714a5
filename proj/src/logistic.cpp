#include "dzlab/logistic.hpp"

#include <cmath>

#include "dzlab/errors.hpp"

namespace dzlab {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double linear(const LogisticModel& m, const LogisticFeatures& f) {
  double z = m.intercept;
  for (std::size_t k = 0; k < kLogisticFeatures; ++k) {
    z += m.weights[k] * m.scaler.apply(k, f[k]);
  }
  return z;
}

}  // namespace

LogisticFeatures logistic_features(const Sample& s, const KinematicLimits& limits) {
  if (s.common_seq.empty()) throw ShapeError("logistic_features: empty window");
  const CommonRow& r = s.common_seq.front();
  const double v = r[0];
  const double x = std::max(r[1], 0.0);
  return {v, r[1], time_to_clear(x, v, limits), time_to_stop(v, limits), r[2]};
}

double LogisticModel::predict(const LogisticFeatures& f) const { return sigmoid(linear(*this, f)); }

double logistic_objective(const LogisticModel& m, const std::vector<LogisticFeatures>& x,
                          const std::vector<int>& y, double l2) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = linear(m, x[i]);
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - static_cast<double>(y[i]) * z;
  }
  double reg = 0.0;
  for (double w : m.weights) reg += w * w;
  return total / static_cast<double>(x.size()) + 0.5 * l2 * reg;
}

std::array<double, kLogisticFeatures + 1> logistic_gradient(
    const LogisticModel& m, const std::vector<LogisticFeatures>& x,
    const std::vector<int>& y, double l2) {
  std::array<double, kLogisticFeatures + 1> g{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = sigmoid(linear(m, x[i])) - static_cast<double>(y[i]);
    for (std::size_t k = 0; k < kLogisticFeatures; ++k) g[k] += r * m.scaler.apply(k, x[i][k]);
    g[kLogisticFeatures] += r;
  }
  const auto n = static_cast<double>(x.size());
  for (std::size_t k = 0; k < kLogisticFeatures; ++k) g[k] = g[k] / n + l2 * m.weights[k];
  g[kLogisticFeatures] /= n;
  return g;
}

LogisticModel logistic_fit(const std::vector<LogisticFeatures>& x, const std::vector<int>& y,
                           const LogisticOptions& options) {
  if (x.empty() || x.size() != y.size()) throw ConfigError("logistic_fit: empty or mismatched data");
  std::vector<std::vector<double>> rows;
  rows.reserve(x.size());
  for (const auto& f : x) rows.emplace_back(f.begin(), f.end());
  LogisticModel m;
  m.scaler = fit_scaler(rows, kLogisticFeatures);
  for (int it = 0; it < options.max_iter; ++it) {
    const auto g = logistic_gradient(m, x, y, options.l2);
    double norm2 = 0.0;
    for (double gi : g) norm2 += gi * gi;
    if (std::sqrt(norm2) < options.grad_tol) break;
    for (std::size_t k = 0; k < kLogisticFeatures; ++k) m.weights[k] -= options.lr * g[k];
    m.intercept -= options.lr * g[kLogisticFeatures];
  }
  return m;
}

LogisticModel logistic_train(const std::vector<Sample>& train_set, const KinematicLimits& limits,
                             const LogisticOptions& options) {
  std::vector<LogisticFeatures> x;
  std::vector<int> y;
  for (const auto& s : train_set) {
    x.push_back(logistic_features(s, limits));
    y.push_back(s.label);
  }
  return logistic_fit(x, y, options);
}

double logistic_predict(const LogisticModel& m, const LogisticFeatures& f) { return m.predict(f); }

std::vector<double> logistic_predict(const LogisticModel& m, const std::vector<Sample>& samples,
                                     const KinematicLimits& limits) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(m.predict(logistic_features(s, limits)));
  return out;
}

}  // namespace dzlab
