#include "bcsnet/losses.hpp"

#include <cmath>

#include "bcsnet/errors.hpp"

namespace bcsnet {

namespace {

constexpr double kClamp = 1e-7;

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

void check_same_numel(const ag::Var& p, const Tensor& g, const char* op) {
  if (p.value().numel() != g.numel()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + p.value().shape_str() + " vs " +
                          g.shape_str());
  }
}

/// −G·log(Pc) − (1−G)·log(1−Pc) as a graph over the clamped prediction.
ag::Var bce_map(const ag::Var& p, const Tensor& g) {
  const ag::Var pc = ag::clamp(p, kClamp, 1.0 - kClamp);
  const ag::Var g_const = ag::Var::constant(g.reshaped(p.value().shape()));
  const ag::Var one_minus_g = ag::affine(g_const, -1.0, 1.0);
  const ag::Var pos = ag::mul(ag::log(pc), g_const);
  const ag::Var neg = ag::mul(ag::log(ag::affine(pc, -1.0, 1.0)), one_minus_g);
  return ag::affine(ag::add(pos, neg), -1.0, 0.0);
}

}  // namespace

Tensor make_weight_map(const Tensor& g, std::int64_t k, double lambda) {
  if (g.ndim() != 2) throw ValidationError("make_weight_map: expected an HxW mask");
  if (k < 1 || k % 2 == 0) {
    throw ValidationError("make_weight_map: kernel size must be odd, got " + std::to_string(k));
  }
  const std::int64_t h = g.dim(0), w = g.dim(1), pad = k / 2;
  const std::int64_t ph = h + 2 * pad, pw = w + 2 * pad;

  // Box mean via a separable sliding window over the reflect-padded plane.
  Tensor padded({ph, pw});
  for (std::int64_t y = 0; y < ph; ++y) {
    const std::int64_t sy = reflect_index(y - pad, h);
    for (std::int64_t x = 0; x < pw; ++x) {
      padded.at(y, x) = g.at(sy, reflect_index(x - pad, w));
    }
  }

  Tensor rows({ph, w});
  for (std::int64_t y = 0; y < ph; ++y) {
    double acc = 0.0;
    for (std::int64_t x = 0; x < k; ++x) acc += padded.at(y, x);
    rows.at(y, 0) = acc;
    for (std::int64_t x = 1; x < w; ++x) {
      acc += padded.at(y, x + k - 1) - padded.at(y, x - 1);
      rows.at(y, x) = acc;
    }
  }

  // For binary masks every partial sum is a small integer, so the sliding
  // sums are exact and constant windows give exactly 0.
  Tensor out({h, w});
  const double kk = static_cast<double>(k * k);
  for (std::int64_t x = 0; x < w; ++x) {
    double acc = 0.0;
    for (std::int64_t y = 0; y < k; ++y) acc += rows.at(y, x);
    out.at(0, x) = lambda * std::abs(acc / kk - g.at(0, x));
    for (std::int64_t y = 1; y < h; ++y) {
      acc += rows.at(y + k - 1, x) - rows.at(y - 1, x);
      out.at(y, x) = lambda * std::abs(acc / kk - g.at(y, x));
    }
  }
  return out;
}

ag::Var wbce(const ag::Var& p, const Tensor& g, const Tensor& eps_map) {
  check_same_numel(p, g, "wbce");
  check_same_numel(p, eps_map, "wbce");
  Tensor weights(p.value().shape());
  double eps_sum = 0.0;
  for (std::int64_t i = 0; i < eps_map.numel(); ++i) {
    weights[i] = 1.0 + eps_map[i];
    eps_sum += eps_map[i];
  }
  const double denom = eps_sum > 0.0 ? eps_sum : weights.sum();
  const ag::Var weighted = ag::mul(bce_map(p, g), ag::Var::constant(weights));
  return ag::affine(ag::sum(weighted), 1.0 / denom, 0.0);
}

ag::Var wiou(const ag::Var& p, const Tensor& g, const Tensor& eps_map) {
  check_same_numel(p, g, "wiou");
  check_same_numel(p, eps_map, "wiou");
  Tensor weights(p.value().shape());
  for (std::int64_t i = 0; i < eps_map.numel(); ++i) weights[i] = 1.0 + eps_map[i];
  const ag::Var w_const = ag::Var::constant(weights);
  const ag::Var g_const = ag::Var::constant(g.reshaped(p.value().shape()));

  const ag::Var inter_map = ag::mul(p, g_const);                       // P∩G := P·G
  const ag::Var union_map = ag::sub(ag::add(p, g_const), inter_map);   // P∪G := P+G−P·G
  const ag::Var inter = ag::sum(ag::mul(inter_map, w_const));
  const ag::Var uni = ag::sum(ag::mul(union_map, w_const));
  if (uni.item() == 0.0) return ag::Var::constant_scalar(0.0);  // empty-over-empty
  return ag::affine(ag::div(inter, uni), -1.0, 1.0);
}

ag::Var boundary_bce(const ag::Var& p_b, const Tensor& g_b) {
  check_same_numel(p_b, g_b, "boundary_bce");
  return ag::mean(bce_map(p_b, g_b));
}

double wbce(const Tensor& p, const Tensor& g, const Tensor& eps_map) {
  ag::NoGradGuard ng;
  return wbce(ag::Var::constant(p), g, eps_map).item();
}

double wiou(const Tensor& p, const Tensor& g, const Tensor& eps_map) {
  ag::NoGradGuard ng;
  return wiou(ag::Var::constant(p), g, eps_map).item();
}

double boundary_bce(const Tensor& p_b, const Tensor& g_b) {
  ag::NoGradGuard ng;
  return boundary_bce(ag::Var::constant(p_b), g_b).item();
}

const char* LossBreakdown::first_non_finite() const {
  for (const auto& [name, value] : components()) {
    if (!std::isfinite(value)) return name;
  }
  if (!std::isfinite(total)) return "total";
  return nullptr;
}

LossTerms total_loss(const DecoderOutputs& outputs, const Tensor& g_batch,
                     const Tensor& gb_batch) {
  if (g_batch.ndim() != 3 || gb_batch.ndim() != 3) {
    throw ValidationError("total_loss: masks must be batched NxHxW");
  }
  const std::int64_t n = g_batch.dim(0), h = g_batch.dim(1), w = g_batch.dim(2);
  for (const ag::Var* out : {&outputs.s2, &outputs.s3, &outputs.s4, &outputs.s_s, &outputs.s_b}) {
    const Tensor& v = out->value();
    if (v.ndim() != 4 || v.dim(0) != n || v.dim(1) != 1 || v.dim(2) != h || v.dim(3) != w) {
      throw ValidationError("total_loss: side output " + v.shape_str() +
                            " does not match masks at input resolution");
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  std::array<ag::Var, 4> wbce_acc, wiou_acc;
  ag::Var bce_acc;
  const std::array<const ag::Var*, 4> seg_outputs{&outputs.s2, &outputs.s3, &outputs.s4,
                                                  &outputs.s_s};
  for (std::int64_t r = 0; r < n; ++r) {
    Tensor g({h, w});
    Tensor gb({h, w});
    std::copy(g_batch.data() + r * h * w, g_batch.data() + (r + 1) * h * w, g.data());
    std::copy(gb_batch.data() + r * h * w, gb_batch.data() + (r + 1) * h * w, gb.data());
    const Tensor eps_map = make_weight_map(g);

    for (std::size_t k = 0; k < seg_outputs.size(); ++k) {
      const ag::Var p = ag::slice_batch(*seg_outputs[k], r);
      const ag::Var bce_k = wbce(p, g, eps_map);
      const ag::Var iou_k = wiou(p, g, eps_map);
      wbce_acc[k] = wbce_acc[k].defined() ? ag::add(wbce_acc[k], bce_k) : bce_k;
      wiou_acc[k] = wiou_acc[k].defined() ? ag::add(wiou_acc[k], iou_k) : iou_k;
    }
    const ag::Var pb = ag::slice_batch(outputs.s_b, r);
    const ag::Var bce_b = boundary_bce(pb, gb);
    bce_acc = bce_acc.defined() ? ag::add(bce_acc, bce_b) : bce_b;
  }

  for (auto& v : wbce_acc) v = ag::affine(v, inv_n, 0.0);
  for (auto& v : wiou_acc) v = ag::affine(v, inv_n, 0.0);
  bce_acc = ag::affine(bce_acc, inv_n, 0.0);

  ag::Var total = bce_acc;
  for (std::size_t k = 0; k < 4; ++k) {
    total = ag::add(total, ag::add(wiou_acc[k], wbce_acc[k]));
  }

  LossTerms terms;
  terms.total = total;
  LossBreakdown& b = terms.breakdown;
  b.wbce_s2 = wbce_acc[0].item();
  b.wbce_s3 = wbce_acc[1].item();
  b.wbce_s4 = wbce_acc[2].item();
  b.wbce_ss = wbce_acc[3].item();
  b.wiou_s2 = wiou_acc[0].item();
  b.wiou_s3 = wiou_acc[1].item();
  b.wiou_s4 = wiou_acc[2].item();
  b.wiou_ss = wiou_acc[3].item();
  b.boundary = bce_acc.item();
  b.total = total.item();
  return terms;
}

}  // namespace bcsnet
