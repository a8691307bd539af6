#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bcsnet/checkpoint.hpp"
#include "bcsnet/config.hpp"
#include "bcsnet/data.hpp"
#include "bcsnet/losses.hpp"
#include "bcsnet/metrics.hpp"
#include "bcsnet/model.hpp"

namespace bcsnet {

/// Bias-corrected adaptive-moment gradient descent.
class Adam {
 public:
  Adam(std::map<std::string, ag::Var>& params, double lr, double beta1, double beta2,
       double eps = 1e-8);
  void step();

 private:
  std::map<std::string, ag::Var>* params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct LossCurvePoint {
  std::int64_t epoch = 0;  // 1-based, after the epoch completed
  LossBreakdown mean;
};
using LossCurve = std::vector<LossCurvePoint>;

struct TrainResult {
  Model model;
  LossCurve curve;
  std::vector<DatasetRecord> dataset;  // the resolved training records
};

/// Resolves "synthetic:<n>" via the generator or loads a dataset directory,
/// normalizing every record to image_size×image_size.
std::vector<DatasetRecord> resolve_dataset(const std::string& data, std::int64_t image_size,
                                           std::uint64_t seed);

/// Deterministic training loop. Writes checkpoints to config.checkpoint_out
/// (every save_interval epochs when set, and at the end) and the loss curve
/// CSV to config.curve_out when set. Aborts with TrainingDiverged naming
/// the first non-finite loss component.
TrainResult train(const TrainConfig& config);

/// Writes "epoch,total,<component...>" rows.
void write_loss_curve_csv(const LossCurve& curve, const std::string& path);

/// Stacks records into N×3×H×W images plus N×H×W mask and boundary batches.
struct Batch {
  Tensor images;
  Tensor masks;
  Tensor boundaries;
};
Batch make_batch(const std::vector<DatasetRecord>& records, const std::vector<std::size_t>& idx);

struct PredictResult {
  Tensor prob;      // H×W, S2 at input resolution
  Tensor mask_bin;  // H×W thresholded at 0.5
};

/// Runs the final side output on one image. The image must match the
/// checkpoint's configured size.
PredictResult predict_image(Model& model, const TrainConfig& config, const CTSlice& slice);

/// Writes the probability map (×255) to out_path and the thresholded mask
/// next to it with an "_mask" suffix; returns the mask path.
std::string write_prediction(const PredictResult& result, const std::string& out_path);

/// Decodes every record of a dataset directory (resized to the configured
/// input size) and reports the six measures.
MetricReport evaluate_model(Model& model, const TrainConfig& config, const std::string& data_root);

/// Mean DSC of 0.5-thresholded predictions over the given records.
double mean_dsc(Model& model, const std::vector<DatasetRecord>& records,
                std::int64_t batch_size = 8);

}  // namespace bcsnet
