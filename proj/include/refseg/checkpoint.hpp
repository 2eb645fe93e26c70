// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "refseg/model.hpp"
#include "refseg/optim.hpp"

namespace refseg {

struct TrainState {
  int64_t step = 0;
  int round = -1;  // -1: initial training
  double gamma = 0.0;
};

// Versioned flat named-parameter archive: JSON header (model config, training
// state, parameter table) followed by raw float32 parameter and optimizer
// moment data. Writes are atomic (tmp + rename).
void save_checkpoint(const std::string& path, const Model& model, AdamW& opt,
                     const TrainState& state);

struct CheckpointData {
  ModelConfig config;
  std::vector<float> params, m1, m2;
  int64_t adam_steps = 0;
  TrainState state;
};

CheckpointData load_checkpoint(const std::string& path);

// Restores parameters into a model built with the same config.
void restore_model(Model& model, const CheckpointData& data);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace refseg
