#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bcsnet/layers.hpp"

namespace bcsnet {

/// Four-stage convolutional encoder. Stage i halves the resolution, so
/// feature level i sits at H/2^i × W/2^i with channels[i-1] channels.
struct EncoderConfig {
  std::array<std::int64_t, 4> channels{16, 32, 64, 128};
  std::int64_t blocks_per_stage = 2;
};

struct ConvBnBlock {
  Conv2dParams conv;
  BatchNormParams bn;
};

struct EncoderParams {
  EncoderConfig config;
  std::array<std::vector<ConvBnBlock>, 4> stages;
};

/// Top-down multi-level features f1..f4.
struct FeaturePyramid {
  ag::Var f1, f2, f3, f4;

  const ag::Var& level(int i) const {
    switch (i) {
      case 1: return f1;
      case 2: return f2;
      case 3: return f3;
      default: return f4;
    }
  }
};

void validate_encoder_config(const EncoderConfig& config);

/// Deterministic per seed; identical (config, seed) pairs produce bitwise
/// identical parameters.
EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Shared initializer used by the full model so one RNG stream covers all
/// parameter groups in a fixed order.
EncoderParams init_encoder(const EncoderConfig& config, Rng& rng);

/// Each stage applies blocks_per_stage × (3×3 conv + norm + ReLU) followed
/// by a 2×2 stride-2 max-pool. Input must be N×3×H×W with H, W positive
/// multiples of 16.
FeaturePyramid encode(const ag::Var& images, const EncoderParams& params, ag::BnMode mode);

}  // namespace bcsnet
