#pragma once

#include "bcsnet/autograd.hpp"

namespace bcsnet {

/// The five side-output probability maps at input resolution, batched as
/// N×1×H×W. s2 is the final segmentation prediction.
struct DecoderOutputs {
  ag::Var s_b;
  ag::Var s_s;
  ag::Var s4;
  ag::Var s3;
  ag::Var s2;
};

}  // namespace bcsnet
