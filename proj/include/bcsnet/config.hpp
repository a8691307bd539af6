#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace bcsnet {

/// Flat key=value training configuration. Unknown keys are rejected when
/// parsing; omitted keys keep their defaults.
struct TrainConfig {
  std::int64_t image_size = 64;  // square input, multiple of 16
  std::int64_t batch_size = 8;
  std::int64_t epochs = 200;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 1;
  bool disable_aggc = false;
  bool disable_sg = false;
  std::array<std::int64_t, 4> encoder_channels{16, 32, 64, 128};
  std::int64_t blocks_per_stage = 2;
  /// Decoder widths for the level-4, level-3, level-2 blocks; 0 mirrors
  /// the encoder width of the same level.
  std::array<std::int64_t, 3> decoder_channels{0, 0, 0};
  /// Dataset root directory, or "synthetic:<n>" for the generator.
  std::string data = "synthetic:20";
  std::string checkpoint_out = "bcsnet.ckpt";
  /// Write a checkpoint every this many epochs; 0 means final only.
  std::int64_t save_interval = 0;
  /// Optional CSV path for the per-epoch loss curve.
  std::string curve_out;

  void validate() const;
  std::array<std::int64_t, 3> resolved_decoder_channels() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

/// Canonical serialization; parse(serialize(c)) == c.
std::string serialize_train_config(const TrainConfig& config);

}  // namespace bcsnet
