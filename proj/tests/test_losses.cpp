#include <doctest.h>

#include <cmath>

#include "bcsnet/data.hpp"
#include "bcsnet/errors.hpp"
#include "bcsnet/losses.hpp"
#include "bcsnet/rng.hpp"

using namespace bcsnet;
namespace ag = bcsnet::ag;

namespace {

constexpr double kLn2 = 0.6931471805599453;

Tensor random_prob_map(std::int64_t h, std::int64_t w, Rng& rng, double lo = 0.05,
                       double hi = 0.95) {
  Tensor t({h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor random_mask(std::int64_t h, std::int64_t w, Rng& rng, double p = 0.5) {
  Tensor t({h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

/// Central finite differences over P for any scalar loss builder.
void check_loss_gradient(const std::function<ag::Var(const ag::Var&)>& loss, const Tensor& p0,
                         double tol = 1e-5, double step = 1e-4) {
  ag::Var p = ag::Var::leaf(p0, true);
  ag::Var out = loss(p);
  ag::backward(out);
  for (std::int64_t i = 0; i < p0.numel(); ++i) {
    auto eval = [&](double d) {
      Tensor t = p0;
      t[i] += d;
      ag::NoGradGuard ng;
      return loss(ag::Var::constant(t)).item();
    };
    const double fd = (eval(step) - eval(-step)) / (2.0 * step);
    const double an = p.grad()[i];
    const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
    CAPTURE(i);
    CHECK(std::abs(fd - an) / denom <= tol);
  }
}

}  // namespace

TEST_CASE("make_weight_map on constant masks is zero") {
  Tensor zeros({8, 8});
  Tensor ones({8, 8}, 1.0);
  CHECK(make_weight_map(zeros, 3).sum() == 0.0);
  CHECK(make_weight_map(ones, 3).sum() == 0.0);
  CHECK(make_weight_map(ones, 31).sum() == 0.0);
}

TEST_CASE("make_weight_map half-plane values at the edge") {
  // Columns 0..3 foreground, 4..7 background.
  Tensor g({8, 8});
  for (std::int64_t y = 0; y < 8; ++y) {
    for (std::int64_t x = 0; x < 4; ++x) g.at(y, x) = 1.0;
  }
  const Tensor eps = make_weight_map(g, 3, 5.0);
  for (std::int64_t y = 0; y < 8; ++y) {
    CHECK(eps.at(y, 3) == doctest::Approx(5.0 / 3.0).epsilon(1e-12));  // mean 2/3 vs 1
    CHECK(eps.at(y, 4) == doctest::Approx(5.0 / 3.0).epsilon(1e-12));  // mean 1/3 vs 0
    CHECK(eps.at(y, 0) == 0.0);  // far side, reflection keeps the window constant
    CHECK(eps.at(y, 7) == 0.0);
  }
  CHECK(eps.min() >= 0.0);
  CHECK(eps.max() <= 5.0);
}

TEST_CASE("make_weight_map rejects even kernels") {
  Tensor g({8, 8});
  CHECK_THROWS_AS(make_weight_map(g, 4), ValidationError);
}

TEST_CASE("wbce closed forms") {
  Rng rng(2);
  const Tensor g = random_mask(8, 8, rng);

  // Perfect prediction after clamping.
  Tensor eps_map = make_weight_map(g, 3);
  CHECK(wbce(g, g, eps_map) <= 1e-6);

  // P=0.5, eps=1 -> 2 ln 2.
  Tensor half({8, 8}, 0.5);
  Tensor ones({8, 8}, 1.0);
  CHECK(wbce(half, g, ones) == doctest::Approx(2.0 * kLn2).epsilon(1e-9));

  // eps = c scaling law: loss = (1+c)/c * mean-BCE.
  const Tensor p = random_prob_map(8, 8, rng);
  double mean_bce = 0.0;
  for (std::int64_t i = 0; i < 64; ++i) {
    mean_bce += -g[i] * std::log(p[i]) - (1.0 - g[i]) * std::log(1.0 - p[i]);
  }
  mean_bce /= 64.0;
  for (double c : {0.5, 1.0, 3.0}) {
    Tensor eps_c({8, 8}, c);
    CHECK(wbce(p, g, eps_c) == doctest::Approx((1.0 + c) / c * mean_bce).epsilon(1e-10));
  }

  // Constant G makes Σε vanish; the guard reduces wbce to plain mean BCE.
  Tensor zeros_mask({8, 8});
  Tensor zeros_eps({8, 8});
  CHECK(wbce(p, zeros_mask, zeros_eps) ==
        doctest::Approx([&] {
          double s = 0.0;
          for (std::int64_t i = 0; i < 64; ++i) s += -std::log(1.0 - p[i]);
          return s / 64.0;
        }()).epsilon(1e-10));
}

TEST_CASE("wbce complement symmetry is exact") {
  Rng rng(3);
  const Tensor g = random_mask(6, 6, rng);
  const Tensor p = random_prob_map(6, 6, rng);
  const Tensor eps_map = make_weight_map(g, 5);
  Tensor pc({6, 6}), gc({6, 6});
  for (std::int64_t i = 0; i < 36; ++i) {
    pc[i] = 1.0 - p[i];
    gc[i] = 1.0 - g[i];
  }
  CHECK(wbce(p, g, eps_map) == wbce(pc, gc, eps_map));
}

TEST_CASE("wiou closed forms") {
  Rng rng(5);
  Tensor g = random_mask(8, 8, rng);
  g[0] = 1.0;
  Tensor eps_map = make_weight_map(g, 3);
  CHECK(wiou(g, g, eps_map) == 0.0);

  Tensor inv({8, 8});
  for (std::int64_t i = 0; i < 64; ++i) inv[i] = 1.0 - g[i];
  CHECK(wiou(inv, g, eps_map) == 1.0);

  // Worked 2x2 example: P=[[1,1],[0,0]], G=[[1,0],[0,0]], eps=0 -> 0.5.
  Tensor p2({2, 2}, {1.0, 1.0, 0.0, 0.0});
  Tensor g2({2, 2}, {1.0, 0.0, 0.0, 0.0});
  Tensor e2({2, 2});
  CHECK(wiou(p2, g2, e2) == 0.5);

  // Empty over empty resolves to 0.
  Tensor z({4, 4});
  CHECK(wiou(z, z, z) == 0.0);

  // Always within [0,1].
  for (int t = 0; t < 20; ++t) {
    const Tensor p = random_prob_map(8, 8, rng, 0.0, 1.0);
    const Tensor gg = random_mask(8, 8, rng, rng.uniform(0.1, 0.9));
    const double v = wiou(p, gg, make_weight_map(gg, 3));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("boundary_bce closed forms") {
  Rng rng(7);
  const Tensor gb = random_mask(8, 8, rng, 0.2);
  CHECK(boundary_bce(gb, gb) <= 1e-6);

  Tensor half({8, 8}, 0.5);
  CHECK(boundary_bce(half, gb) == doctest::Approx(kLn2).epsilon(1e-9));
  Tensor other = random_mask(8, 8, rng, 0.7);
  CHECK(boundary_bce(half, other) == doctest::Approx(kLn2).epsilon(1e-9));

  Tensor hot({8, 8}, 1.0 - 1e-7);
  Tensor zeros({8, 8});
  CHECK(boundary_bce(hot, zeros) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("loss gradients match central finite differences on random 4x4 maps") {
  Rng rng(11);
  const Tensor g = random_mask(4, 4, rng);
  const Tensor gb = random_mask(4, 4, rng, 0.3);
  const Tensor eps_map = make_weight_map(g, 3);
  const Tensor p0 = random_prob_map(4, 4, rng, 0.1, 0.9);

  check_loss_gradient([&](const ag::Var& p) { return wbce(p, g, eps_map); }, p0);
  check_loss_gradient([&](const ag::Var& p) { return wiou(p, g, eps_map); }, p0);
  check_loss_gradient([&](const ag::Var& p) { return boundary_bce(p, gb); }, p0);
}

namespace {

DecoderOutputs constant_outputs(std::int64_t n, std::int64_t h, std::int64_t w, double value) {
  DecoderOutputs outs;
  Tensor t({n, 1, h, w}, value);
  outs.s_b = ag::Var::constant(t);
  outs.s_s = ag::Var::constant(t);
  outs.s4 = ag::Var::constant(t);
  outs.s3 = ag::Var::constant(t);
  outs.s2 = ag::Var::constant(t);
  return outs;
}

}  // namespace

TEST_CASE("total_loss is the sum of its nine components") {
  const auto records = synth_blobs(2, 32, 32, 13);
  const std::int64_t h = 32, w = 32;
  Tensor g({2, h, w}), gb({2, h, w});
  for (int r = 0; r < 2; ++r) {
    std::copy(records[r].mask.pixels.data(), records[r].mask.pixels.data() + h * w,
              g.data() + r * h * w);
    std::copy(records[r].boundary.pixels.data(), records[r].boundary.pixels.data() + h * w,
              gb.data() + r * h * w);
  }

  const LossTerms terms = total_loss(constant_outputs(2, h, w, 0.5), g, gb);
  double acc = 0.0;
  for (const auto& [name, v] : terms.breakdown.components()) {
    CHECK(v >= 0.0);
    acc += v;
  }
  CHECK(std::abs(acc - terms.breakdown.total) <= 1e-9);
  CHECK(terms.breakdown.first_non_finite() == nullptr);

  // Uniform-0.5 outputs: every segmentation term has its closed component
  // value, the boundary term is ln 2, and Eq.-style bookkeeping holds.
  Tensor half({h, w}, 0.5);
  double expect = 0.0;
  for (int r = 0; r < 2; ++r) {
    const Tensor& mask = records[r].mask.pixels;
    const Tensor eps_map = make_weight_map(mask);
    expect += 4.0 * (wbce(half, mask, eps_map) + wiou(half, mask, eps_map));
    expect += boundary_bce(half, records[r].boundary.pixels);
  }
  expect /= 2.0;
  CHECK(terms.breakdown.total == doctest::Approx(expect).epsilon(1e-9));
  CHECK(terms.breakdown.boundary == doctest::Approx(kLn2).epsilon(1e-9));
}

TEST_CASE("total_loss on perfect predictions is tiny") {
  const auto records = synth_blobs(1, 64, 64, 17);
  const std::int64_t h = 64, w = 64;
  Tensor g({1, h, w}), gb({1, h, w});
  std::copy(records[0].mask.pixels.data(), records[0].mask.pixels.data() + h * w, g.data());
  std::copy(records[0].boundary.pixels.data(), records[0].boundary.pixels.data() + h * w,
            gb.data());

  DecoderOutputs outs;
  Tensor seg({1, 1, h, w}), bnd({1, 1, h, w});
  std::copy(g.data(), g.data() + h * w, seg.data());
  std::copy(gb.data(), gb.data() + h * w, bnd.data());
  outs.s2 = outs.s3 = outs.s4 = outs.s_s = ag::Var::constant(seg);
  outs.s_b = ag::Var::constant(bnd);

  const LossTerms terms = total_loss(outs, g, gb);
  CHECK(terms.breakdown.total <= 1e-5);
}

TEST_CASE("total_loss validates shapes") {
  Tensor g({1, 32, 32}), gb({1, 32, 32});
  CHECK_THROWS_AS(total_loss(constant_outputs(1, 16, 16, 0.5), g, gb), ValidationError);
  CHECK_THROWS_AS(total_loss(constant_outputs(2, 32, 32, 0.5), g, gb), ValidationError);
}
