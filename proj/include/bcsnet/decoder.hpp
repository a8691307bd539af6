#pragma once

#include <array>
#include <cstdint>

#include "bcsnet/encoder.hpp"
#include "bcsnet/outputs.hpp"

namespace bcsnet {

/// Boundary attention head over f1: 1×1 → 3×3 → 1×1 convolutions down to a
/// single channel, then a sigmoid.
struct BAParams {
  Conv2dParams c1, c2, c3;
};

/// Semantic guidance head: 1×1 projections of f2..f4 to a common width
/// (f3's channel count), fused at f3's resolution into a 1-channel map.
struct SGParams {
  Conv2dParams proj2, proj3, proj4, fuse;
};

/// Attention-guided global context for one decoder level: a 3×3 spatial
/// attention kernel over the 2-channel pooled descriptor, plus the
/// learnable gain on the global-context residual branch.
struct AGGCParams {
  Conv2dParams sa;
  ag::Var sigma;  // scalar, initialized to 0
};

/// One reconstruction block: AGGC, fusion convolution with normalization,
/// and the 1-channel side-output head.
struct BCSRParams {
  AGGCParams aggc;
  Conv2dParams fuse;
  BatchNormParams fuse_bn;
  Conv2dParams side;
};

struct DecoderParams {
  BAParams ba;
  SGParams sg;
  BCSRParams b4, b3, b2;  // applied in that order
};

struct AblationFlags {
  bool disable_aggc = false;
  bool disable_sg = false;
};

/// Optional captures for visualization.
struct DecodeInternals {
  ag::Var spatial_attention_l2;  // A_s of the level-2 block, native res
  ag::Var s_b_native;            // boundary map at f1's resolution
  ag::Var s_s_native;            // semantic map at f3's resolution
};

struct BoundaryAttentionOut {
  ag::Var supervised;  // upsampled to input resolution
  ag::Var native;      // at f1's resolution
};

BoundaryAttentionOut boundary_attention(const ag::Var& f1, const BAParams& params,
                                        std::int64_t out_h, std::int64_t out_w);

/// S_s at f3's resolution (the intermediate scale).
ag::Var semantic_guidance(const ag::Var& f2, const ag::Var& f3, const ag::Var& f4,
                          const SGParams& params);

struct SpatialEnhanceOut {
  ag::Var features;   // A_s ⊙ f + f
  ag::Var attention;  // A_s, N×1×h×w
};

/// A_s = sigmoid(conv3x3(concat(mean_c(f), max_c(f)))); residual gating.
SpatialEnhanceOut spatial_enhance(const ag::Var& f, const Conv2dParams& sa);

/// f_b = S_b ⊙ f_s + f_s with S_b bilinearly resized to f_s's size and
/// broadcast across channels.
ag::Var boundary_enhance(const ag::Var& f_s, const ag::Var& s_b);

/// f_aggc = ς·(G ⊙ f_b) + f_b where G attends over all spatial locations
/// of the channel-normalized features.
ag::Var global_context(const ag::Var& f_b, const ag::Var& sigma);

/// Dense relation map for a single C×h×w feature block: ω = rowsoftmax(AᵀA)
/// over the unit-normalized channel vectors, and the context features
/// G = A·ω. Rows of ω sum to 1.
struct GlobalContextMap {
  Tensor omega;    // (h·w)×(h·w)
  Tensor context;  // C×h×w
};
GlobalContextMap global_context_map(const Tensor& f_b);

struct AggcOut {
  ag::Var features;
  ag::Var attention;  // spatial attention map
};

/// Spatial attention, then boundary attention, then global context. With
/// disabled=true the encoder features pass through unchanged.
AggcOut aggc(const ag::Var& f, const ag::Var& s_b, const AGGCParams& params, bool disabled);

/// Semantic gating of Eq-1 style fusion: F̄ + F̄ ⊙ S_s.
ag::Var sg_gate(const ag::Var& f_bar, const ag::Var& s_s);

struct BcsrBlockOut {
  ag::Var features;     // F_i, decoder width at f_i's resolution
  ag::Var side_native;  // S_i before upsampling
  ag::Var attention;    // A_s of this block
};

/// F_prev is resized to f_i's resolution when levels differ; s_s must
/// already be at f_i's resolution.
BcsrBlockOut bcsr_block(const ag::Var& f_prev, const ag::Var& f_i, const ag::Var& s_b_native,
                        const ag::Var& s_s_level, const BCSRParams& params,
                        const AblationFlags& flags, ag::BnMode mode);

DecoderParams init_decoder(const EncoderConfig& enc, const std::array<std::int64_t, 3>& widths,
                           Rng& rng);

/// Full decoder pass producing the five side outputs at input resolution.
DecoderOutputs decode(const FeaturePyramid& features, const DecoderParams& params,
                      const AblationFlags& flags, ag::BnMode mode, std::int64_t out_h,
                      std::int64_t out_w, DecodeInternals* internals = nullptr);

}  // namespace bcsnet
