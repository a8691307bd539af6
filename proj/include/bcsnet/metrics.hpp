#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bcsnet/data.hpp"
#include "bcsnet/tensor.hpp"

namespace bcsnet {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

/// Exact pixel counts over binary maps of equal shape.
ConfusionCounts confusion(const Tensor& p_bin, const Tensor& g);

/// (precision, recall). An empty denominator resolves to 1 when both maps
/// are empty and to 0 otherwise.
std::pair<double, double> precision_recall(const ConfusionCounts& c);

/// Dice similarity coefficient 2|P∩G|/(|P|+|G|); both empty -> 1.
double dsc(const Tensor& p_bin, const Tensor& g);

/// Structure measure: alpha·S_object + (1-alpha)·S_region. The object
/// term compares foreground/background means and deviations; the region
/// term averages a structural similarity over the four quadrants split at
/// the ground-truth centroid, weighted by area. Degenerate ground truths:
/// empty -> 1 - mean(P), full -> mean(P).
double s_measure(const Tensor& p, const Tensor& g, double alpha = 0.5);

/// Enhanced-alignment measure: mean over pixels of ((xi+1)^2)/4 with
/// xi = 2·phi_G·phi_P / (phi_G^2 + phi_P^2 + 1e-8) and phi_M = M - mean(M).
/// Degenerate ground truths: empty -> mean(1-P), full -> mean(P).
double e_measure(const Tensor& p, const Tensor& g);

/// Mean absolute error.
double mae(const Tensor& p, const Tensor& g);

struct MetricRow {
  std::string id;
  double dsc = 0, prec = 0, recall = 0, sm = 0, ephi = 0, mae = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;  // id == "mean"
};

struct Prediction {
  std::string id;
  Tensor prob;  // H×W continuous map in [0,1]
};

/// Per-image metrics plus arithmetic means. The overlap metrics run on the
/// thresholded map; S_m, E_phi and MAE use the continuous map.
MetricReport evaluate_dataset(const std::vector<Prediction>& predictions,
                              const std::vector<DatasetRecord>& records, double threshold = 0.5);

/// CSV with header id,dsc,prec,recall,sm,ephi,mae and a final mean row.
std::string metric_csv(const MetricReport& report);
void write_metric_csv(const MetricReport& report, const std::string& path);

}  // namespace bcsnet
