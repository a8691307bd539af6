#include "bcsnet/decoder.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bcsnet/errors.hpp"

namespace bcsnet {

BoundaryAttentionOut boundary_attention(const ag::Var& f1, const BAParams& params,
                                        std::int64_t out_h, std::int64_t out_w) {
  ag::Var x = ag::conv2d(f1, params.c1.w, params.c1.b);
  x = ag::conv2d(x, params.c2.w, params.c2.b);
  x = ag::conv2d(x, params.c3.w, params.c3.b);
  const ag::Var native = ag::sigmoid(x);
  return {ag::bilinear_resize(native, out_h, out_w), native};
}

ag::Var semantic_guidance(const ag::Var& f2, const ag::Var& f3, const ag::Var& f4,
                          const SGParams& params) {
  if (f2.value().dim(2) != 2 * f3.value().dim(2) || f4.value().dim(2) * 2 != f3.value().dim(2)) {
    throw ValidationError("semantic_guidance: features are not at adjacent pyramid levels");
  }
  const ag::Var p2 = ag::avgpool2(ag::conv2d(f2, params.proj2.w, params.proj2.b));
  const ag::Var p3 = ag::conv2d(f3, params.proj3.w, params.proj3.b);
  const ag::Var p4 = ag::bilinear_resize(ag::conv2d(f4, params.proj4.w, params.proj4.b),
                                         f3.value().dim(2), f3.value().dim(3));
  const ag::Var fused = ag::conv2d(ag::add(ag::add(p2, p3), p4), params.fuse.w, params.fuse.b);
  return ag::sigmoid(fused);
}

SpatialEnhanceOut spatial_enhance(const ag::Var& f, const Conv2dParams& sa) {
  const ag::Var descriptor = ag::concat_channels(ag::channel_mean(f), ag::channel_max(f));
  const ag::Var attention = ag::sigmoid(ag::conv2d(descriptor, sa.w, sa.b));
  const ag::Var enhanced = ag::add(ag::mul_bcast_c(f, attention), f);
  return {enhanced, attention};
}

ag::Var boundary_enhance(const ag::Var& f_s, const ag::Var& s_b) {
  const ag::Var resized = ag::bilinear_resize(s_b, f_s.value().dim(2), f_s.value().dim(3));
  return ag::add(ag::mul_bcast_c(f_s, resized), f_s);
}

ag::Var global_context(const ag::Var& f_b, const ag::Var& sigma) {
  if (!f_b.value().all_finite()) throw ValidationError("global_context: non-finite input");
  const ag::Var normalized = ag::l2_normalize_channels(f_b);
  const ag::Var context = ag::attention_context(normalized);
  return ag::add(ag::scale(ag::mul(context, f_b), sigma), f_b);
}

GlobalContextMap global_context_map(const Tensor& f_b) {
  Tensor x = f_b;
  if (x.ndim() == 4) {
    if (x.dim(0) != 1) throw ValidationError("global_context_map: expected a single element");
    x = x.reshaped({x.dim(1), x.dim(2), x.dim(3)});
  }
  if (x.ndim() != 3) throw ValidationError("global_context_map: expected CxHxW");
  const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);

  // Unit L2 channel vectors per location; zero vectors stay zero.
  Tensor a({c, hw});
  for (std::int64_t p = 0; p < hw; ++p) {
    double norm = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) norm += x[ch * hw + p] * x[ch * hw + p];
    norm = std::sqrt(norm);
    if (norm < 1e-12) continue;
    for (std::int64_t ch = 0; ch < c; ++ch) a.at(ch, p) = x[ch * hw + p] / norm;
  }

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> am(a.data(), c, hw);
  RowMat omega = am.transpose() * am;
  for (Eigen::Index r = 0; r < omega.rows(); ++r) {
    auto row = omega.row(r);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  RowMat g = am * omega;

  GlobalContextMap out;
  out.omega = Tensor({hw, hw});
  std::copy(omega.data(), omega.data() + omega.size(), out.omega.data());
  out.context = Tensor({c, x.dim(1), x.dim(2)});
  std::copy(g.data(), g.data() + g.size(), out.context.data());
  return out;
}

AggcOut aggc(const ag::Var& f, const ag::Var& s_b, const AGGCParams& params, bool disabled) {
  const SpatialEnhanceOut se = spatial_enhance(f, params.sa);
  if (disabled) return {f, se.attention};
  const ag::Var f_b = boundary_enhance(se.features, s_b);
  return {global_context(f_b, params.sigma), se.attention};
}

ag::Var sg_gate(const ag::Var& f_bar, const ag::Var& s_s) {
  return ag::add(f_bar, ag::mul_bcast_c(f_bar, s_s));
}

BcsrBlockOut bcsr_block(const ag::Var& f_prev, const ag::Var& f_i, const ag::Var& s_b_native,
                        const ag::Var& s_s_level, const BCSRParams& params,
                        const AblationFlags& flags, ag::BnMode mode) {
  const std::int64_t h = f_i.value().dim(2), w = f_i.value().dim(3);
  const ag::Var prev = ag::bilinear_resize(f_prev, h, w);
  if (s_s_level.value().dim(2) != h || s_s_level.value().dim(3) != w) {
    throw ValidationError("bcsr_block: semantic map resolution " +
                          s_s_level.value().shape_str() + " does not match features at " +
                          std::to_string(h) + "x" + std::to_string(w));
  }

  const AggcOut enhanced = aggc(f_i, s_b_native, params.aggc, flags.disable_aggc);
  const ag::Var f_bar = ag::concat_channels(prev, enhanced.features);
  const ag::Var gated = flags.disable_sg ? f_bar : sg_gate(f_bar, s_s_level);
  const ag::Var fused = ag::conv2d(gated, params.fuse.w, params.fuse.b);
  const ag::Var features = ag::relu(ag::batchnorm2d(fused, params.fuse_bn.gamma,
                                                    params.fuse_bn.beta, *params.fuse_bn.running_mean,
                                                    *params.fuse_bn.running_var, mode));
  const ag::Var side = ag::sigmoid(ag::conv2d(features, params.side.w, params.side.b));
  return {features, side, enhanced.attention};
}

DecoderParams init_decoder(const EncoderConfig& enc, const std::array<std::int64_t, 3>& widths,
                           Rng& rng) {
  const std::int64_t c1 = enc.channels[0], c2 = enc.channels[1], c3 = enc.channels[2],
                     c4 = enc.channels[3];
  const std::int64_t d4 = widths[0], d3 = widths[1], d2 = widths[2];
  if (d4 < 1 || d3 < 1 || d2 < 1) throw ValidationError("decoder widths must be positive");

  DecoderParams p;
  p.ba.c1 = init_conv(rng, c1, c1, 1);
  p.ba.c2 = init_conv(rng, c1, c1, 3);
  p.ba.c3 = init_conv(rng, 1, c1, 1);

  p.sg.proj2 = init_conv(rng, c3, c2, 1);
  p.sg.proj3 = init_conv(rng, c3, c3, 1);
  p.sg.proj4 = init_conv(rng, c3, c4, 1);
  p.sg.fuse = init_conv(rng, 1, c3, 1);

  const auto make_block = [&rng](std::int64_t in_ch, std::int64_t enc_ch, std::int64_t out_ch) {
    BCSRParams block;
    block.aggc.sa = init_conv(rng, 1, 2, 3);
    block.aggc.sigma = ag::Var::leaf(Tensor::scalar(0.0), true);  // pure residual at start
    block.fuse = init_conv(rng, out_ch, in_ch + enc_ch, 3);
    block.fuse_bn = init_bn(out_ch);
    block.side = init_conv(rng, 1, out_ch, 1);
    return block;
  };
  p.b4 = make_block(c4, c4, d4);
  p.b3 = make_block(d4, c3, d3);
  p.b2 = make_block(d3, c2, d2);
  return p;
}

DecoderOutputs decode(const FeaturePyramid& features, const DecoderParams& params,
                      const AblationFlags& flags, ag::BnMode mode, std::int64_t out_h,
                      std::int64_t out_w, DecodeInternals* internals) {
  const BoundaryAttentionOut ba = boundary_attention(features.f1, params.ba, out_h, out_w);
  const ag::Var s_s = semantic_guidance(features.f2, features.f3, features.f4, params.sg);

  // The semantic map lives at f3's scale: pooled once for the first block,
  // used as-is at level 3, upsampled once at level 2.
  const ag::Var s_s_l4 = ag::avgpool2(s_s);
  const ag::Var s_s_l3 = s_s;
  const ag::Var s_s_l2 =
      ag::bilinear_resize(s_s, 2 * s_s.value().dim(2), 2 * s_s.value().dim(3));

  const BcsrBlockOut b4 =
      bcsr_block(features.f4, features.f4, ba.native, s_s_l4, params.b4, flags, mode);
  const BcsrBlockOut b3 =
      bcsr_block(b4.features, features.f3, ba.native, s_s_l3, params.b3, flags, mode);
  const BcsrBlockOut b2 =
      bcsr_block(b3.features, features.f2, ba.native, s_s_l2, params.b2, flags, mode);

  DecoderOutputs out;
  out.s_b = ba.supervised;
  out.s_s = ag::bilinear_resize(s_s, out_h, out_w);
  out.s4 = ag::bilinear_resize(b4.side_native, out_h, out_w);
  out.s3 = ag::bilinear_resize(b3.side_native, out_h, out_w);
  out.s2 = ag::bilinear_resize(b2.side_native, out_h, out_w);

  if (internals) {
    internals->spatial_attention_l2 = b2.attention;
    internals->s_b_native = ba.native;
    internals->s_s_native = s_s;
  }
  return out;
}

}  // namespace bcsnet
