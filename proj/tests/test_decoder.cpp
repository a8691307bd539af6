#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bcsnet/decoder.hpp"
#include "bcsnet/errors.hpp"
#include "bcsnet/rng.hpp"

using namespace bcsnet;
namespace ag = bcsnet::ag;

namespace {

void zero_out(ag::Var& v) {
  std::fill(v.mutable_value().vec().begin(), v.mutable_value().vec().end(), 0.0);
}

Tensor random_nchw(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1.0,
                   double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

DecoderParams test_decoder_params(const EncoderConfig& enc, std::uint64_t seed) {
  Rng rng(seed);
  return init_decoder(enc, {enc.channels[3], enc.channels[2], enc.channels[1]}, rng);
}

FeaturePyramid random_pyramid(const EncoderConfig& enc, std::int64_t n, std::int64_t h,
                              std::int64_t w, std::uint64_t seed) {
  FeaturePyramid p;
  p.f1 = ag::Var::constant(random_nchw({n, enc.channels[0], h / 2, w / 2}, seed + 1, 0.0, 1.0));
  p.f2 = ag::Var::constant(random_nchw({n, enc.channels[1], h / 4, w / 4}, seed + 2, 0.0, 1.0));
  p.f3 = ag::Var::constant(random_nchw({n, enc.channels[2], h / 8, w / 8}, seed + 3, 0.0, 1.0));
  p.f4 = ag::Var::constant(random_nchw({n, enc.channels[3], h / 16, w / 16}, seed + 4, 0.0, 1.0));
  return p;
}

}  // namespace

TEST_CASE("boundary_attention range, zero-parameter value, and shapes") {
  EncoderConfig enc;
  DecoderParams params = test_decoder_params(enc, 3);
  const Tensor f1 = random_nchw({1, 16, 32, 32}, 7);
  ag::NoGradGuard ng;

  const BoundaryAttentionOut out =
      boundary_attention(ag::Var::constant(f1), params.ba, 64, 64);
  CHECK(out.supervised.value().shape() == std::vector<std::int64_t>{1, 1, 64, 64});
  CHECK(out.native.value().shape() == std::vector<std::int64_t>{1, 1, 32, 32});
  for (std::int64_t i = 0; i < out.native.value().numel(); ++i) {
    CHECK(out.native.value()[i] > 0.0);
    CHECK(out.native.value()[i] < 1.0);
  }

  zero_out(params.ba.c1.w);
  zero_out(params.ba.c1.b);
  zero_out(params.ba.c2.w);
  zero_out(params.ba.c2.b);
  zero_out(params.ba.c3.w);
  zero_out(params.ba.c3.b);
  const BoundaryAttentionOut flat = boundary_attention(ag::Var::constant(f1), params.ba, 64, 64);
  for (std::int64_t i = 0; i < flat.supervised.value().numel(); ++i) {
    CHECK(flat.supervised.value()[i] == 0.5);
  }
}

TEST_CASE("semantic_guidance resolution rule and zero-kernel value") {
  EncoderConfig enc;
  DecoderParams params = test_decoder_params(enc, 5);
  ag::NoGradGuard ng;
  const ag::Var f2 = ag::Var::constant(random_nchw({1, 32, 16, 16}, 11));
  const ag::Var f3 = ag::Var::constant(random_nchw({1, 64, 8, 8}, 12));
  const ag::Var f4 = ag::Var::constant(random_nchw({1, 128, 4, 4}, 13));

  const ag::Var s_s = semantic_guidance(f2, f3, f4, params.sg);
  CHECK(s_s.value().shape() == std::vector<std::int64_t>{1, 1, 8, 8});

  zero_out(params.sg.fuse.w);
  zero_out(params.sg.fuse.b);
  const ag::Var flat = semantic_guidance(f2, f3, f4, params.sg);
  for (std::int64_t i = 0; i < flat.value().numel(); ++i) CHECK(flat.value()[i] == 0.5);

  CHECK_THROWS_AS(semantic_guidance(f3, f3, f4, params.sg), ValidationError);
}

TEST_CASE("semantic_guidance propagates constant inputs to a constant map") {
  EncoderConfig enc;
  const DecoderParams params = test_decoder_params(enc, 6);
  ag::NoGradGuard ng;
  const ag::Var f2 = ag::Var::constant(Tensor({1, 32, 16, 16}, 0.3));
  const ag::Var f3 = ag::Var::constant(Tensor({1, 64, 8, 8}, -0.2));
  const ag::Var f4 = ag::Var::constant(Tensor({1, 128, 4, 4}, 0.7));
  const ag::Var s_s = semantic_guidance(f2, f3, f4, params.sg);
  const double first = s_s.value()[0];
  for (std::int64_t i = 0; i < s_s.value().numel(); ++i) {
    CHECK(s_s.value()[i] == doctest::Approx(first).epsilon(1e-12));
  }
}

TEST_CASE("spatial_enhance basics and the worked 2x2 example") {
  EncoderConfig enc;
  DecoderParams params = test_decoder_params(enc, 8);
  ag::NoGradGuard ng;

  // Zero features stay zero through the residual.
  const SpatialEnhanceOut zero = spatial_enhance(ag::Var::constant(Tensor({1, 4, 4, 4})),
                                                 params.b3.aggc.sa);
  for (std::int64_t i = 0; i < zero.features.value().numel(); ++i) {
    CHECK(zero.features.value()[i] == 0.0);
  }

  // Non-negative features are amplified by at most 2.
  const Tensor f = random_nchw({1, 4, 4, 4}, 21, 0.0, 1.0);
  const SpatialEnhanceOut se = spatial_enhance(ag::Var::constant(f), params.b3.aggc.sa);
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    CHECK(se.features.value()[i] >= f[i]);
    CHECK(se.features.value()[i] <= 2.0 * f[i]);
  }

  // C=1 2x2 input with a zeroed attention kernel: A_s = 0.5 exactly.
  zero_out(params.b3.aggc.sa.w);
  zero_out(params.b3.aggc.sa.b);
  const Tensor hand({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const SpatialEnhanceOut out = spatial_enhance(ag::Var::constant(hand), params.b3.aggc.sa);
  CHECK(out.attention.value()[0] == 0.5);
  CHECK(out.features.value()[0] == doctest::Approx(1.5));
  CHECK(out.features.value()[1] == doctest::Approx(3.0));
  CHECK(out.features.value()[2] == doctest::Approx(4.5));
  CHECK(out.features.value()[3] == doctest::Approx(6.0));
}

TEST_CASE("boundary_enhance identities") {
  ag::NoGradGuard ng;
  const Tensor f = random_nchw({1, 3, 4, 4}, 31);
  const ag::Var fv = ag::Var::constant(f);

  const ag::Var zero_b = ag::Var::constant(Tensor({1, 1, 4, 4}));
  const ag::Var same = boundary_enhance(fv, zero_b);
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(same.value()[i] == f[i]);

  const ag::Var one_b = ag::Var::constant(Tensor({1, 1, 4, 4}, 1.0));
  const ag::Var twice = boundary_enhance(fv, one_b);
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(twice.value()[i] == 2.0 * f[i]);

  // Single-pixel arithmetic: S_b=0.25, f_s=4 -> 5.
  const ag::Var px = boundary_enhance(ag::Var::constant(Tensor({1, 1, 1, 1}, 4.0)),
                                      ag::Var::constant(Tensor({1, 1, 1, 1}, 0.25)));
  CHECK(px.value()[0] == 5.0);

  // The boundary map is resized to the feature resolution before gating.
  const ag::Var coarse = ag::Var::constant(Tensor({1, 1, 2, 2}, 1.0));
  const ag::Var up = boundary_enhance(fv, coarse);
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(up.value()[i] == doctest::Approx(2.0 * f[i]));
}

TEST_CASE("global_context with zero gain is the exact identity") {
  ag::NoGradGuard ng;
  const Tensor f = random_nchw({2, 5, 3, 3}, 41);
  const ag::Var out = global_context(ag::Var::constant(f), ag::Var::constant_scalar(0.0));
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(out.value()[i] == f[i]);
}

TEST_CASE("global_context single-location hand evaluation") {
  ag::NoGradGuard ng;
  const ag::Var out = global_context(ag::Var::constant(Tensor({1, 1, 1, 1}, 2.0)),
                                     ag::Var::constant_scalar(0.5));
  CHECK(out.value()[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("global context relation map is row-stochastic and consistent") {
  const Tensor f = random_nchw({1, 6, 4, 4}, 43);
  const GlobalContextMap map = global_context_map(f);
  REQUIRE(map.omega.shape() == std::vector<std::int64_t>{16, 16});
  for (std::int64_t r = 0; r < 16; ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < 16; ++c) s += map.omega.at(r, c);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }

  // The dense map agrees with the differentiable op's forward value.
  ag::NoGradGuard ng;
  const ag::Var g =
      ag::attention_context(ag::l2_normalize_channels(ag::Var::constant(f)));
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    CHECK(map.context[i] == doctest::Approx(g.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("global_context rejects non-finite input") {
  Tensor bad({1, 2, 2, 2});
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  ag::NoGradGuard ng;
  CHECK_THROWS_AS(global_context(ag::Var::constant(bad), ag::Var::constant_scalar(0.0)),
                  ValidationError);
}

TEST_CASE("global_context is equivariant to spatial permutations") {
  ag::NoGradGuard ng;
  const Tensor f = random_nchw({1, 4, 2, 3}, 47);
  const std::int64_t c = 4, hw = 6;
  const std::int64_t perm[06] = {3, 0, 5, 1, 4, 2};
  Tensor fp({1, 4, 2, 3});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t p = 0; p < hw; ++p) fp[ch * hw + p] = f[ch * hw + perm[p]];
  }
  const ag::Var a = global_context(ag::Var::constant(f), ag::Var::constant_scalar(0.7));
  const ag::Var b = global_context(ag::Var::constant(fp), ag::Var::constant_scalar(0.7));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t p = 0; p < hw; ++p) {
      CHECK(b.value()[ch * hw + p] == doctest::Approx(a.value()[ch * hw + perm[p]]).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggc composition identities") {
  EncoderConfig enc;
  DecoderParams params = test_decoder_params(enc, 51);
  ag::NoGradGuard ng;
  const ag::Var s_b_zero = ag::Var::constant(Tensor({1, 1, 8, 8}));

  // Zero input stays zero end to end.
  const AggcOut zero = aggc(ag::Var::constant(Tensor({1, 64, 8, 8})), s_b_zero, params.b3.aggc,
                            false);
  for (std::int64_t i = 0; i < zero.features.value().numel(); ++i) {
    CHECK(zero.features.value()[i] == 0.0);
  }

  // Sigma=0, S_b=0, zeroed attention kernel: exactly the 1.5x spatial gain.
  zero_out(params.b3.aggc.sa.w);
  zero_out(params.b3.aggc.sa.b);
  const Tensor f = random_nchw({1, 64, 8, 8}, 53, 0.0, 1.0);
  const AggcOut chain = aggc(ag::Var::constant(f), s_b_zero, params.b3.aggc, false);
  CHECK(chain.features.value().same_shape(f));
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    CHECK(chain.features.value()[i] == doctest::Approx(1.5 * f[i]).epsilon(1e-6));
  }

  // Disabled AGGC passes the encoder features through untouched.
  const AggcOut off = aggc(ag::Var::constant(f), s_b_zero, params.b3.aggc, true);
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(off.features.value()[i] == f[i]);
}

TEST_CASE("sg_gate with a zero semantic map is the identity") {
  ag::NoGradGuard ng;
  const Tensor f = random_nchw({2, 6, 4, 4}, 57);
  const ag::Var gated = sg_gate(ag::Var::constant(f), ag::Var::constant(Tensor({2, 1, 4, 4})));
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(gated.value()[i] == f[i]);
}

TEST_CASE("bcsr_block shape trace at level 4 and side-output conventions") {
  EncoderConfig enc;
  DecoderParams params = test_decoder_params(enc, 61);
  ag::NoGradGuard ng;
  const ag::Var f4 = ag::Var::constant(random_nchw({1, 128, 4, 4}, 63, 0.0, 1.0));
  const ag::Var s_b = ag::Var::constant(random_nchw({1, 1, 32, 32}, 64, 0.0, 1.0));
  const ag::Var s_s4 = ag::Var::constant(random_nchw({1, 1, 4, 4}, 65, 0.0, 1.0));

  const BcsrBlockOut out =
      bcsr_block(f4, f4, s_b, s_s4, params.b4, AblationFlags{}, ag::BnMode::kEval);
  CHECK(out.features.value().shape() == std::vector<std::int64_t>{1, 128, 4, 4});
  CHECK(out.side_native.value().shape() == std::vector<std::int64_t>{1, 1, 4, 4});

  zero_out(params.b4.side.w);
  zero_out(params.b4.side.b);
  const BcsrBlockOut flat =
      bcsr_block(f4, f4, s_b, s_s4, params.b4, AblationFlags{}, ag::BnMode::kEval);
  for (std::int64_t i = 0; i < flat.side_native.value().numel(); ++i) {
    CHECK(flat.side_native.value()[i] == 0.5);
  }

  // Resolution mismatch of the semantic map is rejected.
  const ag::Var wrong = ag::Var::constant(Tensor({1, 1, 8, 8}, 0.5));
  CHECK_THROWS_AS(bcsr_block(f4, f4, s_b, wrong, params.b4, AblationFlags{}, ag::BnMode::kEval),
                  ValidationError);
}

TEST_CASE("disable_sg equals gating with an identically zero semantic map") {
  EncoderConfig enc;
  const DecoderParams params = test_decoder_params(enc, 71);
  ag::NoGradGuard ng;
  const ag::Var f4 = ag::Var::constant(random_nchw({1, 128, 4, 4}, 72, 0.0, 1.0));
  const ag::Var s_b = ag::Var::constant(random_nchw({1, 1, 32, 32}, 73, 0.0, 1.0));
  const ag::Var s_s = ag::Var::constant(random_nchw({1, 1, 4, 4}, 74, 0.0, 1.0));
  const ag::Var s_s_zero = ag::Var::constant(Tensor({1, 1, 4, 4}));

  AblationFlags off;
  off.disable_sg = true;
  const BcsrBlockOut a = bcsr_block(f4, f4, s_b, s_s, params.b4, off, ag::BnMode::kEval);
  const BcsrBlockOut b =
      bcsr_block(f4, f4, s_b, s_s_zero, params.b4, AblationFlags{}, ag::BnMode::kEval);
  CHECK(a.features.value().vec() == b.features.value().vec());
  CHECK(a.side_native.value().vec() == b.side_native.value().vec());
}

TEST_CASE("decode emits five in-range maps at input resolution and is deterministic") {
  EncoderConfig enc;
  const DecoderParams params = test_decoder_params(enc, 81);
  ag::NoGradGuard ng;

  for (const auto [h, w] : {std::pair<std::int64_t, std::int64_t>{64, 64},
                            std::pair<std::int64_t, std::int64_t>{96, 80}}) {
    const FeaturePyramid pyr = random_pyramid(enc, 2, h, w, 83);
    DecodeInternals internals;
    const DecoderOutputs out =
        decode(pyr, params, AblationFlags{}, ag::BnMode::kEval, h, w, &internals);
    for (const ag::Var* m : {&out.s_b, &out.s_s, &out.s4, &out.s3, &out.s2}) {
      CHECK(m->value().shape() == std::vector<std::int64_t>{2, 1, h, w});
      CHECK(m->value().min() >= 0.0);
      CHECK(m->value().max() <= 1.0);
    }
    CHECK(internals.spatial_attention_l2.value().shape() ==
          std::vector<std::int64_t>{2, 1, h / 4, w / 4});

    const DecoderOutputs again = decode(pyr, params, AblationFlags{}, ag::BnMode::kEval, h, w);
    CHECK(again.s2.value().vec() == out.s2.value().vec());
    CHECK(again.s_b.value().vec() == out.s_b.value().vec());
  }
}

TEST_CASE("decode with both ablation flags still emits five valid maps") {
  EncoderConfig enc;
  const DecoderParams params = test_decoder_params(enc, 91);
  ag::NoGradGuard ng;
  AblationFlags flags;
  flags.disable_aggc = true;
  flags.disable_sg = true;
  const FeaturePyramid pyr = random_pyramid(enc, 1, 64, 64, 93);
  const DecoderOutputs out = decode(pyr, params, flags, ag::BnMode::kEval, 64, 64);
  for (const ag::Var* m : {&out.s_b, &out.s_s, &out.s4, &out.s3, &out.s2}) {
    CHECK(m->value().shape() == std::vector<std::int64_t>{1, 1, 64, 64});
    CHECK(m->value().min() >= 0.0);
    CHECK(m->value().max() <= 1.0);
  }
}
