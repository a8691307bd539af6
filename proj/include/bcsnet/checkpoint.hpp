#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "bcsnet/config.hpp"
#include "bcsnet/model.hpp"
#include "bcsnet/tensor.hpp"

namespace bcsnet {

/// Single-file named-tensor archive with the config snapshot, epoch
/// counter, and a format-version field. Round-trips byte-identically.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  TrainConfig config;
  std::int64_t epoch = 0;
  std::map<std::string, Tensor> tensors;  // parameters and buffers
};

Checkpoint snapshot(const Model& model, const TrainConfig& config, std::int64_t epoch);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the model described by the checkpoint's config and loads every
/// tensor into it. Unknown or missing names are errors.
Model restore_model(const Checkpoint& ckpt);

}  // namespace bcsnet
