#include "bcsnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "bcsnet/errors.hpp"

namespace bcsnet {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_binary(const Tensor& t, const char* what) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) {
      throw ValidationError(std::string(what) + " must be binary (0/1)");
    }
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
  }
}

}  // namespace

ConfusionCounts confusion(const Tensor& p_bin, const Tensor& g) {
  check_same_shape(p_bin, g, "confusion");
  check_binary(p_bin, "prediction");
  check_binary(g, "ground truth");
  ConfusionCounts c;
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    if (p_bin[i] == 1.0) {
      g[i] == 1.0 ? ++c.tp : ++c.fp;
    } else {
      g[i] == 1.0 ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

std::pair<double, double> precision_recall(const ConfusionCounts& c) {
  const bool p_empty = c.tp + c.fp == 0;
  const bool g_empty = c.tp + c.fn == 0;
  double prec, recall;
  if (p_empty) {
    prec = g_empty ? 1.0 : 0.0;
  } else {
    prec = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (g_empty) {
    recall = p_empty ? 1.0 : 0.0;
  } else {
    recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  return {prec, recall};
}

double dsc(const Tensor& p_bin, const Tensor& g) {
  const ConfusionCounts c = confusion(p_bin, g);
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both empty
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// structure measure
// ---------------------------------------------------------------------------

namespace {

/// Similarity of a prediction against a region: 2x̄/(x̄²+1+σ_x+eps) with the
/// mean and sample deviation taken over the region's pixels.
double object_similarity(const Tensor& pred, const Tensor& region_mask, bool invert_pred,
                         bool complement_region) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool in_region = complement_region ? region_mask[i] == 0.0 : region_mask[i] != 0.0;
    if (!in_region) continue;
    sum += invert_pred ? 1.0 - pred[i] : pred[i];
    ++n;
  }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool in_region = complement_region ? region_mask[i] == 0.0 : region_mask[i] != 0.0;
    if (!in_region) continue;
    const double v = (invert_pred ? 1.0 - pred[i] : pred[i]) - mean;
    ss += v * v;
  }
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(const Tensor& p, const Tensor& g) {
  const double mu = g.sum() / static_cast<double>(g.numel());
  const double o_fg = object_similarity(p, g, /*invert_pred=*/false, /*complement_region=*/false);
  const double o_bg = object_similarity(p, g, /*invert_pred=*/true, /*complement_region=*/true);
  return mu * o_fg + (1.0 - mu) * o_bg;
}

/// Ground-truth centroid split point. A row/column lands in the first
/// region when its pixel center lies strictly below the continuous
/// centroid, which keeps the split exactly symmetric under flips (up to
/// centroids landing exactly on a pixel center).
std::pair<std::int64_t, std::int64_t> gt_centroid(const Tensor& g) {
  const std::int64_t h = g.dim(0), w = g.dim(1);
  const double area = g.sum();
  if (area == 0.0) return {w / 2, h / 2};
  double sx = 0.0, sy = 0.0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (g.at(y, x) != 0.0) {
        sx += static_cast<double>(x + 1);
        sy += static_cast<double>(y + 1);
      }
    }
  }
  const auto split = [](double mu, std::int64_t n) {
    const std::int64_t s = static_cast<std::int64_t>(std::ceil(mu)) - 1;
    return std::clamp<std::int64_t>(s, 0, n);
  };
  return {split(sx / area, w), split(sy / area, h)};
}

double region_ssim(const Tensor& p, const Tensor& g, std::int64_t y0, std::int64_t y1,
                   std::int64_t x0, std::int64_t x1) {
  const std::int64_t n = (y1 - y0) * (x1 - x0);
  if (n <= 0) return 0.0;
  double sp = 0.0, sg = 0.0;
  for (std::int64_t y = y0; y < y1; ++y) {
    for (std::int64_t x = x0; x < x1; ++x) {
      sp += p.at(y, x);
      sg += g.at(y, x);
    }
  }
  const double mp = sp / static_cast<double>(n);
  const double mg = sg / static_cast<double>(n);
  double vp = 0.0, vg = 0.0, vpg = 0.0;
  for (std::int64_t y = y0; y < y1; ++y) {
    for (std::int64_t x = x0; x < x1; ++x) {
      const double dp = p.at(y, x) - mp;
      const double dg = g.at(y, x) - mg;
      vp += dp * dp;
      vg += dg * dg;
      vpg += dp * dg;
    }
  }
  const double denom_n = static_cast<double>(n - 1) + kEps;
  vp /= denom_n;
  vg /= denom_n;
  vpg /= denom_n;
  const double alpha = 4.0 * mp * mg * vpg;
  const double beta = (mp * mp + mg * mg) * (vp + vg);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

double s_region(const Tensor& p, const Tensor& g) {
  const std::int64_t h = g.dim(0), w = g.dim(1);
  const auto [cx, cy] = gt_centroid(g);  // 1-based split point
  const double total = static_cast<double>(h * w);
  double q = 0.0;
  const std::int64_t ys[3] = {0, cy, h};
  const std::int64_t xs[3] = {0, cx, w};
  for (int ry = 0; ry < 2; ++ry) {
    for (int rx = 0; rx < 2; ++rx) {
      const std::int64_t n = (ys[ry + 1] - ys[ry]) * (xs[rx + 1] - xs[rx]);
      if (n <= 0) continue;
      const double weight = static_cast<double>(n) / total;
      q += weight * region_ssim(p, g, ys[ry], ys[ry + 1], xs[rx], xs[rx + 1]);
    }
  }
  return q;
}

}  // namespace

double s_measure(const Tensor& p, const Tensor& g, double alpha) {
  check_same_shape(p, g, "s_measure");
  check_binary(g, "ground truth");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("s_measure: alpha must lie in [0,1]");
  const double n = static_cast<double>(g.numel());
  const double mu = g.sum() / n;
  const double mean_p = p.sum() / n;
  if (mu == 0.0) return 1.0 - mean_p;
  if (mu == 1.0) return mean_p;
  const double q = alpha * s_object(p, g) + (1.0 - alpha) * s_region(p, g);
  return q > 0.0 ? q : 0.0;
}

double e_measure(const Tensor& p, const Tensor& g) {
  check_same_shape(p, g, "e_measure");
  check_binary(g, "ground truth");
  const double n = static_cast<double>(g.numel());
  const double mu_g = g.sum() / n;
  const double mu_p = p.sum() / n;
  if (mu_g == 0.0) return 1.0 - mu_p;  // alignment with the complement map
  if (mu_g == 1.0) return mu_p;        // alignment with the identity map
  constexpr double kDelta = 1e-8;
  double acc = 0.0;
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    const double phi_g = g[i] - mu_g;
    const double phi_p = p[i] - mu_p;
    const double xi = 2.0 * phi_g * phi_p / (phi_g * phi_g + phi_p * phi_p + kDelta);
    acc += (xi + 1.0) * (xi + 1.0) / 4.0;
  }
  return acc / n;
}

double mae(const Tensor& p, const Tensor& g) {
  check_same_shape(p, g, "mae");
  double acc = 0.0;
  for (std::int64_t i = 0; i < g.numel(); ++i) acc += std::abs(p[i] - g[i]);
  return acc / static_cast<double>(g.numel());
}

MetricReport evaluate_dataset(const std::vector<Prediction>& predictions,
                              const std::vector<DatasetRecord>& records, double threshold) {
  if (predictions.size() != records.size()) {
    throw ValidationError("evaluate_dataset: " + std::to_string(predictions.size()) +
                          " predictions for " + std::to_string(records.size()) + " records");
  }
  if (records.empty()) throw ValidationError("evaluate_dataset: empty dataset");

  MetricReport report;
  report.rows.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Prediction& pred = predictions[i];
    const DatasetRecord& rec = records[i];
    if (pred.id != rec.id) {
      throw ValidationError("evaluate_dataset: prediction id '" + pred.id +
                            "' does not match record '" + rec.id + "'");
    }
    const Tensor& g = rec.mask.pixels;
    check_same_shape(pred.prob, g, "evaluate_dataset");

    Tensor p_bin(pred.prob.shape());
    for (std::int64_t k = 0; k < p_bin.numel(); ++k) {
      p_bin[k] = pred.prob[k] > threshold ? 1.0 : 0.0;
    }

    MetricRow row;
    row.id = rec.id;
    const auto [prec, recall] = precision_recall(confusion(p_bin, g));
    row.prec = prec;
    row.recall = recall;
    row.dsc = dsc(p_bin, g);
    row.sm = s_measure(pred.prob, g);
    row.ephi = e_measure(pred.prob, g);
    row.mae = mae(pred.prob, g);
    report.rows.push_back(row);
  }

  MetricRow& m = report.mean;
  m.id = "mean";
  for (const MetricRow& r : report.rows) {
    m.dsc += r.dsc;
    m.prec += r.prec;
    m.recall += r.recall;
    m.sm += r.sm;
    m.ephi += r.ephi;
    m.mae += r.mae;
  }
  const double inv = 1.0 / static_cast<double>(report.rows.size());
  m.dsc *= inv;
  m.prec *= inv;
  m.recall *= inv;
  m.sm *= inv;
  m.ephi *= inv;
  m.mae *= inv;
  return report;
}

namespace {

void append_row(std::string& out, const MetricRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.id.c_str(), r.dsc, r.prec,
                r.recall, r.sm, r.ephi, r.mae);
  out += buf;
}

}  // namespace

std::string metric_csv(const MetricReport& report) {
  std::string out = "id,dsc,prec,recall,sm,ephi,mae\n";
  for (const MetricRow& r : report.rows) append_row(out, r);
  append_row(out, report.mean);
  return out;
}

void write_metric_csv(const MetricReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open CSV for writing: " + path);
  f << metric_csv(report);
  if (!f) throw IoError("failed to write CSV: " + path);
}

}  // namespace bcsnet
