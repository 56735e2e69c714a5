#include "dzlab/checkpoint.hpp"

#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "dzlab/errors.hpp"

namespace dzlab {

using nlohmann::json;

json to_json(const Hyper& h) {
  return {{"d_model", h.d_model},   {"heads", h.heads},         {"layers", h.layers},
          {"d_ff", h.d_ff},         {"dropout", h.dropout},     {"epochs", h.epochs},
          {"batch_size", h.batch_size}, {"lr", h.lr},           {"beta1", h.beta1},
          {"beta2", h.beta2},       {"adam_eps", h.adam_eps},
          {"key_source", std::string(to_string(h.key_source))}};
}

Hyper hyper_from_json(const json& j) {
  Hyper h;
  auto opt = [&](const char* key, auto& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<std::decay_t<decltype(out)>>();
  };
  opt("d_model", h.d_model);
  opt("heads", h.heads);
  opt("layers", h.layers);
  opt("d_ff", h.d_ff);
  opt("dropout", h.dropout);
  opt("epochs", h.epochs);
  opt("batch_size", h.batch_size);
  opt("lr", h.lr);
  opt("beta1", h.beta1);
  opt("beta2", h.beta2);
  opt("adam_eps", h.adam_eps);
  if (auto it = j.find("key_source"); it != j.end()) {
    h.key_source = key_source_from_string(it->get<std::string>());
  }
  h.validate();
  return h;
}

json to_json(const ModelParams& p) {
  json tensors = json::object();
  json manifest = json::object();
  for (const auto& [name, t] : p.tensors) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.size()));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
    }
    manifest[name] = {t.rows(), t.cols()};
    tensors[name] = data;
  }
  return {{"format", "dzlab-checkpoint"},
          {"version", kCheckpointVersion},
          {"variant", std::string(to_string(p.variant))},
          {"init_seed", p.init_seed},
          {"hyper", to_json(p.hyper)},
          {"shapes", manifest},
          {"tensors", tensors}};
}

ModelParams model_params_from_json(const json& j) {
  if (j.value("format", "") != "dzlab-checkpoint") throw ConfigError("not a dzlab checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw ConfigError(fmt::format("unsupported checkpoint version {}", j.at("version").get<int>()));
  }
  ModelParams p;
  p.variant = variant_from_string(j.at("variant").get<std::string>());
  p.init_seed = j.at("init_seed").get<std::uint64_t>();
  p.hyper = hyper_from_json(j.at("hyper"));
  const ModelParams expected = init_params(p.variant, p.hyper, 0);
  for (const auto& [name, shape] : j.at("shapes").items()) {
    const auto rows = shape.at(0).get<Eigen::Index>();
    const auto cols = shape.at(1).get<Eigen::Index>();
    const auto data = j.at("tensors").at(name).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw ShapeError("checkpoint tensor '" + name + "' does not match its shape");
    }
    const auto it = expected.tensors.find(name);
    if (it == expected.tensors.end() || it->second.rows() != rows || it->second.cols() != cols) {
      throw ShapeError("checkpoint tensor '" + name + "' does not fit the hyperparameters");
    }
    Eigen::MatrixXd t(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    p.tensors[name] = std::move(t);
  }
  if (p.tensors.size() != expected.tensors.size()) throw ShapeError("checkpoint is missing tensors");
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << to_json(p).dump() << '\n';
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return model_params_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint '" + path + "': " + e.what());
  }
}

json to_json(const LogisticModel& m) {
  return {{"format", "dzlab-logistic"},
          {"version", kCheckpointVersion},
          {"features", {"v0_mps", "x_m", "t_a_s", "t_b_s", "yellow_elapsed_s"}},
          {"weights", m.weights},
          {"intercept", m.intercept},
          {"scaler", {{"mean", m.scaler.mean}, {"sd", m.scaler.sd}}}};
}

LogisticModel logistic_model_from_json(const json& j) {
  if (j.value("format", "") != "dzlab-logistic") throw ConfigError("not a logistic checkpoint");
  LogisticModel m;
  m.weights = j.at("weights").get<std::array<double, kLogisticFeatures>>();
  m.intercept = j.at("intercept").get<double>();
  m.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
  m.scaler.sd = j.at("scaler").at("sd").get<std::vector<double>>();
  return m;
}

void write_loss_history_csv(std::ostream& out, const std::vector<double>& history) {
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) out << fmt::format("{},{:.17g}\n", i, history[i]);
}

}  // namespace dzlab
