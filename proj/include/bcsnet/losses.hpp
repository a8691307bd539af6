#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "bcsnet/autograd.hpp"
#include "bcsnet/outputs.hpp"
#include "bcsnet/tensor.hpp"

namespace bcsnet {

/// Per-pixel loss weight emphasizing boundary-adjacent pixels:
/// ε = λ·|meanpool_{k×k}(G) − G| with symmetric-reflection padding, so
/// constant masks give ε ≡ 0 and ε ∈ [0, λ] always.
Tensor make_weight_map(const Tensor& g, std::int64_t k = 31, double lambda = 5.0);

/// Weighted binary cross entropy:
/// Σ [−G·log P − (1−G)·log(1−P)]·(1+ε) / Σ ε, with P clamped to
/// [1e-7, 1−1e-7] and the denominator falling back to Σ(1+ε) when Σε = 0
/// (constant masks), which reduces the term to plain mean BCE.
ag::Var wbce(const ag::Var& p, const Tensor& g, const Tensor& eps_map);

/// Weighted soft-IoU loss: 1 − Σ(P·G)(1+ε) / Σ(P+G−P·G)(1+ε), in [0,1].
/// An all-zero numerator and denominator (both maps empty) yields 0.
ag::Var wiou(const ag::Var& p, const Tensor& g, const Tensor& eps_map);

/// Mean binary cross entropy against boundary labels, same clamping.
ag::Var boundary_bce(const ag::Var& p_b, const Tensor& g_b);

// Value-only conveniences.
double wbce(const Tensor& p, const Tensor& g, const Tensor& eps_map);
double wiou(const Tensor& p, const Tensor& g, const Tensor& eps_map);
double boundary_bce(const Tensor& p_b, const Tensor& g_b);

/// The nine reported loss components plus their sum.
struct LossBreakdown {
  double wbce_s2 = 0, wiou_s2 = 0;
  double wbce_s3 = 0, wiou_s3 = 0;
  double wbce_s4 = 0, wiou_s4 = 0;
  double wbce_ss = 0, wiou_ss = 0;
  double boundary = 0;
  double total = 0;

  std::array<std::pair<const char*, double>, 9> components() const {
    return {{{"wbce_s2", wbce_s2},
             {"wiou_s2", wiou_s2},
             {"wbce_s3", wbce_s3},
             {"wiou_s3", wiou_s3},
             {"wbce_s4", wbce_s4},
             {"wiou_s4", wiou_s4},
             {"wbce_ss", wbce_ss},
             {"wiou_ss", wiou_ss},
             {"boundary_bce", boundary}}};
  }

  /// Name of the first non-finite component, or nullptr when all are finite.
  const char* first_non_finite() const;
};

struct LossTerms {
  ag::Var total;  // scalar
  LossBreakdown breakdown;
};

/// Total objective: Σ_{k∈{S2,S3,S4,Ss}} (wiou_k + wbce_k) + bce(S_b).
/// Inputs are batched (outputs N×1×H×W, masks N×H×W); every component is
/// averaged over the batch. ε is derived from G once per record and shared
/// by the four segmentation terms.
LossTerms total_loss(const DecoderOutputs& outputs, const Tensor& g_batch,
                     const Tensor& gb_batch);

}  // namespace bcsnet
