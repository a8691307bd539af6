#pragma once

#include <cstdint>
#include <memory>

#include "bcsnet/autograd.hpp"
#include "bcsnet/rng.hpp"
#include "bcsnet/tensor.hpp"

namespace bcsnet {

struct Conv2dParams {
  ag::Var w;  // (Cout, Cin, K, K)
  ag::Var b;  // (Cout)
};

struct BatchNormParams {
  ag::Var gamma;
  ag::Var beta;
  std::shared_ptr<Tensor> running_mean;
  std::shared_ptr<Tensor> running_var;
};

/// Weights drawn from a fan-in-scaled uniform U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
/// biases zero.
Conv2dParams init_conv(Rng& rng, std::int64_t cout, std::int64_t cin, std::int64_t k);

/// Unit scale, zero offset, zero running mean, unit running variance.
BatchNormParams init_bn(std::int64_t channels);

ag::Var conv_bn_relu(const ag::Var& x, const Conv2dParams& conv, const BatchNormParams& bn,
                     ag::BnMode mode);

}  // namespace bcsnet
