#pragma once

#include <string>

#include "geofuse/train.hpp"

namespace geofuse {

// JSON config covering training, pipeline hyperparameters, and ablation
// switches; unknown keys are rejected. Missing keys keep their defaults.
TrainConfig load_train_config(const std::string& path);
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

}  // namespace geofuse
