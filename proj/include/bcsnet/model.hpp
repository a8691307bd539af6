#pragma once

#include <map>
#include <memory>
#include <string>

#include "bcsnet/config.hpp"
#include "bcsnet/decoder.hpp"
#include "bcsnet/encoder.hpp"
#include "bcsnet/outputs.hpp"

namespace bcsnet {

struct ModelConfig {
  EncoderConfig encoder;
  std::array<std::int64_t, 3> decoder_channels{128, 64, 32};  // levels 4, 3, 2
  AblationFlags ablation;
};

ModelConfig model_config_from(const TrainConfig& config);

/// The full network: encoder pyramid plus the three-block reconstruction
/// decoder. Owns every learnable parameter and normalization buffer under
/// stable names for the optimizer, checkpoints, and gradient checks.
class Model {
 public:
  Model() = default;

  static Model init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  struct Forward {
    DecoderOutputs outputs;
    DecodeInternals internals;
  };

  /// images: N×3×H×W with H, W positive multiples of 16.
  Forward forward(const Tensor& images, ag::BnMode mode);

  std::map<std::string, ag::Var>& params() { return params_; }
  const std::map<std::string, ag::Var>& params() const { return params_; }
  std::map<std::string, std::shared_ptr<Tensor>>& buffers() { return buffers_; }
  const std::map<std::string, std::shared_ptr<Tensor>>& buffers() const { return buffers_; }

  void zero_grads();

  const EncoderParams& encoder() const { return encoder_; }
  const DecoderParams& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  EncoderParams encoder_;
  DecoderParams decoder_;
  std::map<std::string, ag::Var> params_;
  std::map<std::string, std::shared_ptr<Tensor>> buffers_;

  void register_params();
};

}  // namespace bcsnet
