#include "bcsnet/model.hpp"

#include "bcsnet/errors.hpp"

namespace bcsnet {

ModelConfig model_config_from(const TrainConfig& config) {
  ModelConfig mc;
  mc.encoder.channels = config.encoder_channels;
  mc.encoder.blocks_per_stage = config.blocks_per_stage;
  mc.decoder_channels = config.resolved_decoder_channels();
  mc.ablation.disable_aggc = config.disable_aggc;
  mc.ablation.disable_sg = config.disable_sg;
  return mc;
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  validate_encoder_config(config.encoder);
  Model m;
  m.cfg_ = config;
  Rng rng(seed);
  m.encoder_ = init_encoder(config.encoder, rng);
  m.decoder_ = init_decoder(config.encoder, config.decoder_channels, rng);
  m.register_params();
  return m;
}

void Model::register_params() {
  params_.clear();
  buffers_.clear();

  const auto add_conv = [this](const std::string& prefix, const Conv2dParams& c) {
    params_[prefix + ".w"] = c.w;
    params_[prefix + ".b"] = c.b;
  };
  const auto add_bn = [this](const std::string& prefix, const BatchNormParams& bn) {
    params_[prefix + ".g"] = bn.gamma;
    params_[prefix + ".b"] = bn.beta;
    buffers_[prefix + ".rm"] = bn.running_mean;
    buffers_[prefix + ".rv"] = bn.running_var;
  };

  for (int stage = 0; stage < 4; ++stage) {
    const auto& blocks = encoder_.stages[static_cast<std::size_t>(stage)];
    for (std::size_t blk = 0; blk < blocks.size(); ++blk) {
      const std::string prefix =
          "encoder.s" + std::to_string(stage + 1) + ".b" + std::to_string(blk);
      add_conv(prefix + ".conv", blocks[blk].conv);
      add_bn(prefix + ".bn", blocks[blk].bn);
    }
  }

  add_conv("ba.c1", decoder_.ba.c1);
  add_conv("ba.c2", decoder_.ba.c2);
  add_conv("ba.c3", decoder_.ba.c3);

  add_conv("sg.proj2", decoder_.sg.proj2);
  add_conv("sg.proj3", decoder_.sg.proj3);
  add_conv("sg.proj4", decoder_.sg.proj4);
  add_conv("sg.fuse", decoder_.sg.fuse);

  const auto add_block = [&](const std::string& prefix, const BCSRParams& b) {
    add_conv(prefix + ".sa", b.aggc.sa);
    params_[prefix + ".sigma"] = b.aggc.sigma;
    add_conv(prefix + ".fuse", b.fuse);
    add_bn(prefix + ".bn", b.fuse_bn);
    add_conv(prefix + ".side", b.side);
  };
  add_block("bcsr4", decoder_.b4);
  add_block("bcsr3", decoder_.b3);
  add_block("bcsr2", decoder_.b2);
}

Model::Forward Model::forward(const Tensor& images, ag::BnMode mode) {
  if (images.ndim() != 4) {
    throw ValidationError("model forward expects Nx3xHxW input, got " + images.shape_str());
  }
  const std::int64_t h = images.dim(2), w = images.dim(3);
  Forward out;
  const FeaturePyramid pyramid = encode(ag::Var::constant(images), encoder_, mode);
  out.outputs = decode(pyramid, decoder_, cfg_.ablation, mode, h, w, &out.internals);
  return out;
}

void Model::zero_grads() {
  for (auto& [name, var] : params_) var.zero_grad();
}

}  // namespace bcsnet
