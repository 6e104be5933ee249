#pragma once

// Checkpoint directory: manifest.json (config, config hash, step, tensor
// table) and tensors.bin (raw little-endian payloads, in manifest order).

#include <string>

#include "json.hpp"
#include "mmpt/model.hpp"
#include "mmpt/training.hpp"

namespace mmpt {

[[nodiscard]] std::string model_config_hash(const MMPTConfig& cfg);

struct CheckpointInfo {
  nlohmann::json manifest;
  MMPTConfig config;
  std::string config_hash;
  std::uint64_t step = 0;
  std::string dtype;
  std::size_t num_attributes = 0;
  std::size_t num_objects = 0;
};

// `extra` is stored verbatim under "extra" (e.g. the experiment config).
template <class T>
void save_checkpoint(const MmptModel<T>& model, const TrainState<T>* state,
                     const std::string& dir, const nlohmann::json& extra = nlohmann::json::object());

[[nodiscard]] CheckpointInfo read_checkpoint_info(const std::string& dir);

// Restores every tensor (and, when `state` is given, the optimizer state).
// A config-hash mismatch is an error unless `force`; name or shape mismatches
// are always errors.
template <class T>
void load_checkpoint(const std::string& dir, MmptModel<T>& model, TrainState<T>* state,
                     bool force = false);

}  // namespace mmpt
