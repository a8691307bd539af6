#include "bcsnet/encoder.hpp"

#include <cmath>

#include "bcsnet/errors.hpp"

namespace bcsnet {

Conv2dParams init_conv(Rng& rng, std::int64_t cout, std::int64_t cin, std::int64_t k) {
  Tensor w({cout, cin, k, k});
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  return Conv2dParams{ag::Var::leaf(std::move(w), true), ag::Var::leaf(Tensor({cout}), true)};
}

BatchNormParams init_bn(std::int64_t channels) {
  BatchNormParams bn;
  bn.gamma = ag::Var::leaf(Tensor({channels}, 1.0), true);
  bn.beta = ag::Var::leaf(Tensor({channels}), true);
  bn.running_mean = std::make_shared<Tensor>(Tensor({channels}));
  bn.running_var = std::make_shared<Tensor>(Tensor({channels}, 1.0));
  return bn;
}

ag::Var conv_bn_relu(const ag::Var& x, const Conv2dParams& conv, const BatchNormParams& bn,
                     ag::BnMode mode) {
  const ag::Var y = ag::conv2d(x, conv.w, conv.b);
  return ag::relu(ag::batchnorm2d(y, bn.gamma, bn.beta, *bn.running_mean, *bn.running_var, mode));
}

void validate_encoder_config(const EncoderConfig& config) {
  for (std::int64_t c : config.channels) {
    if (c < 1) throw ValidationError("encoder channels must be positive");
  }
  if (config.blocks_per_stage < 1) throw ValidationError("blocks_per_stage must be positive");
}

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng) {
  validate_encoder_config(config);
  EncoderParams params;
  params.config = config;
  std::int64_t cin = 3;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t cout = config.channels[static_cast<std::size_t>(stage)];
    for (std::int64_t blk = 0; blk < config.blocks_per_stage; ++blk) {
      ConvBnBlock block;
      block.conv = init_conv(rng, cout, blk == 0 ? cin : cout, 3);
      block.bn = init_bn(cout);
      params.stages[static_cast<std::size_t>(stage)].push_back(std::move(block));
    }
    cin = cout;
  }
  return params;
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return init_encoder(config, rng);
}

FeaturePyramid encode(const ag::Var& images, const EncoderParams& params, ag::BnMode mode) {
  const Tensor& x = images.value();
  if (x.ndim() != 4 || x.dim(1) != 3) {
    throw ValidationError("encode: expected Nx3xHxW input, got " + x.shape_str());
  }
  const std::int64_t h = x.dim(2), w = x.dim(3);
  if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0) {
    throw ValidationError("encode: input size must be a positive multiple of 16, got " +
                          std::to_string(h) + "x" + std::to_string(w));
  }

  FeaturePyramid pyramid;
  ag::Var cur = images;
  for (int stage = 0; stage < 4; ++stage) {
    for (const ConvBnBlock& block : params.stages[static_cast<std::size_t>(stage)]) {
      cur = conv_bn_relu(cur, block.conv, block.bn, mode);
    }
    cur = ag::maxpool2(cur);
    switch (stage) {
      case 0: pyramid.f1 = cur; break;
      case 1: pyramid.f2 = cur; break;
      case 2: pyramid.f3 = cur; break;
      default: pyramid.f4 = cur; break;
    }
  }
  return pyramid;
}

}  // namespace bcsnet
