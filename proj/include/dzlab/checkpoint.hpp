#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dzlab/logistic.hpp"
#include "dzlab/transformer.hpp"

namespace dzlab {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const Hyper& h);
Hyper hyper_from_json(const nlohmann::json& j);

// Versioned JSON checkpoint with a shape manifest. Tensors are stored
// row-major; doubles are written with round-trip precision.
nlohmann::json to_json(const ModelParams& p);
ModelParams model_params_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const ModelParams& p);
ModelParams load_checkpoint(const std::string& path);

nlohmann::json to_json(const LogisticModel& m);
LogisticModel logistic_model_from_json(const nlohmann::json& j);

void write_loss_history_csv(std::ostream& out, const std::vector<double>& history);

}  // namespace dzlab
