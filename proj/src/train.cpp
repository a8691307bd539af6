#include "bcsnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bcsnet/errors.hpp"
#include "bcsnet/image_io.hpp"
#include "bcsnet/rng.hpp"

namespace fs = std::filesystem;

namespace bcsnet {

Adam::Adam(std::map<std::string, ag::Var>& params, double lr, double beta1, double beta2,
           double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, var] : params) {
    m_[name] = Tensor(var.value().shape());
    v_[name] = Tensor(var.value().shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, var] : *params_) {
    if (!var.has_grad()) continue;
    Tensor& m = m_[name];
    Tensor& v = v_[name];
    Tensor& value = var.mutable_value();
    const Tensor& g = var.grad();
    for (std::int64_t i = 0; i < value.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<DatasetRecord> resolve_dataset(const std::string& data, std::int64_t image_size,
                                           std::uint64_t seed) {
  std::vector<DatasetRecord> records;
  if (data.rfind("synthetic:", 0) == 0) {
    const std::string count = data.substr(10);
    std::int64_t n = 0;
    try {
      n = std::stoll(count);
    } catch (const std::exception&) {
      throw ValidationError("invalid synthetic dataset spec: " + data);
    }
    records = synth_blobs(n, image_size, image_size, seed);
  } else {
    records = load_dataset_dir(data);
    for (auto& rec : records) rec = resize_record(rec, image_size, image_size);
  }
  if (records.empty()) throw ValidationError("dataset is empty: " + data);
  return records;
}

Batch make_batch(const std::vector<DatasetRecord>& records, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ValidationError("make_batch: empty index list");
  const std::int64_t h = records[idx[0]].slice.height(), w = records[idx[0]].slice.width();
  const std::int64_t n = static_cast<std::int64_t>(idx.size());
  Batch batch{Tensor({n, 3, h, w}), Tensor({n, h, w}), Tensor({n, h, w})};
  for (std::int64_t i = 0; i < n; ++i) {
    const DatasetRecord& rec = records[idx[static_cast<std::size_t>(i)]];
    if (rec.slice.height() != h || rec.slice.width() != w) {
      throw ValidationError("make_batch: records have mixed sizes");
    }
    std::copy(rec.slice.pixels.data(), rec.slice.pixels.data() + 3 * h * w,
              batch.images.data() + i * 3 * h * w);
    std::copy(rec.mask.pixels.data(), rec.mask.pixels.data() + h * w,
              batch.masks.data() + i * h * w);
    std::copy(rec.boundary.pixels.data(), rec.boundary.pixels.data() + h * w,
              batch.boundaries.data() + i * h * w);
  }
  return batch;
}

namespace {

void accumulate_breakdown(LossBreakdown& acc, const LossBreakdown& b, double weight) {
  acc.wbce_s2 += weight * b.wbce_s2;
  acc.wiou_s2 += weight * b.wiou_s2;
  acc.wbce_s3 += weight * b.wbce_s3;
  acc.wiou_s3 += weight * b.wiou_s3;
  acc.wbce_s4 += weight * b.wbce_s4;
  acc.wiou_s4 += weight * b.wiou_s4;
  acc.wbce_ss += weight * b.wbce_ss;
  acc.wiou_ss += weight * b.wiou_ss;
  acc.boundary += weight * b.boundary;
  acc.total += weight * b.total;
}

}  // namespace

TrainResult train(const TrainConfig& config) {
  config.validate();
  TrainResult result;
  result.dataset = resolve_dataset(config.data, config.image_size, config.seed);
  result.model = Model::init(model_config_from(config), config.seed);

  Adam optimizer(result.model.params(), config.learning_rate, config.adam_beta1,
                 config.adam_beta2);
  const std::size_t n = result.dataset.size();

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fixed per-epoch data order derived from the seed.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(Rng::mix(config.seed, 0x9e3779b9ULL + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.below(i + 1))]);
    }

    LossBreakdown epoch_mean;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Batch batch = make_batch(result.dataset, idx);

      Model::Forward fwd = result.model.forward(batch.images, ag::BnMode::kTrain);
      const LossTerms terms = total_loss(fwd.outputs, batch.masks, batch.boundaries);
      if (const char* bad = terms.breakdown.first_non_finite()) {
        throw TrainingDiverged("non-finite loss component '" + std::string(bad) + "' at epoch " +
                               std::to_string(epoch + 1));
      }
      result.model.zero_grads();
      ag::backward(terms.total);
      optimizer.step();
      result.model.zero_grads();

      accumulate_breakdown(epoch_mean, terms.breakdown,
                           static_cast<double>(idx.size()) / static_cast<double>(n));
    }
    result.curve.push_back({epoch + 1, epoch_mean});

    if (config.save_interval > 0 && (epoch + 1) % config.save_interval == 0 &&
        !config.checkpoint_out.empty()) {
      save_checkpoint(config.checkpoint_out, snapshot(result.model, config, epoch + 1));
    }
  }

  if (!config.checkpoint_out.empty()) {
    save_checkpoint(config.checkpoint_out, snapshot(result.model, config, config.epochs));
  }
  if (!config.curve_out.empty()) {
    write_loss_curve_csv(result.curve, config.curve_out);
  }
  return result;
}

void write_loss_curve_csv(const LossCurve& curve, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open curve CSV for writing: " + path);
  f << "epoch,total";
  LossBreakdown probe;
  for (const auto& [name, value] : probe.components()) f << ',' << name;
  f << '\n';
  for (const LossCurvePoint& p : curve) {
    f << p.epoch << ',' << p.mean.total;
    for (const auto& [name, value] : p.mean.components()) f << ',' << value;
    f << '\n';
  }
  if (!f) throw IoError("failed to write curve CSV: " + path);
}

PredictResult predict_image(Model& model, const TrainConfig& config, const CTSlice& slice) {
  const std::int64_t s = config.image_size;
  if (slice.height() != s || slice.width() != s) {
    throw ValidationError("image is " + std::to_string(slice.height()) + "x" +
                          std::to_string(slice.width()) + " but the checkpoint expects " +
                          std::to_string(s) + "x" + std::to_string(s));
  }
  Tensor images({1, 3, s, s});
  std::copy(slice.pixels.data(), slice.pixels.data() + 3 * s * s, images.data());

  ag::NoGradGuard ng;
  const Model::Forward fwd = model.forward(images, ag::BnMode::kEval);
  PredictResult out{Tensor({s, s}), Tensor({s, s})};
  const Tensor& s2 = fwd.outputs.s2.value();
  for (std::int64_t i = 0; i < s * s; ++i) {
    out.prob[i] = s2[i];
    out.mask_bin[i] = s2[i] > 0.5 ? 1.0 : 0.0;
  }
  return out;
}

std::string write_prediction(const PredictResult& result, const std::string& out_path) {
  const std::int64_t h = result.prob.dim(0), w = result.prob.dim(1);
  GrayImage prob{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  GrayImage mask{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (std::int64_t i = 0; i < h * w; ++i) {
    prob.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(result.prob[i] * 255.0));
    mask.pixels[static_cast<std::size_t>(i)] = result.mask_bin[i] != 0.0 ? 255 : 0;
  }
  write_png_gray(out_path, prob);
  const fs::path p(out_path);
  const std::string mask_path = (p.parent_path() / (p.stem().string() + "_mask" +
                                                    (p.has_extension() ? p.extension().string()
                                                                       : std::string(".png"))))
                                    .string();
  write_png_gray(mask_path, mask);
  return mask_path;
}

namespace {

std::vector<Prediction> predict_records(Model& model, const std::vector<DatasetRecord>& records,
                                        std::int64_t batch_size) {
  std::vector<Prediction> preds;
  preds.reserve(records.size());
  ag::NoGradGuard ng;
  for (std::size_t start = 0; start < records.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(records.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
    const Batch batch = make_batch(records, idx);
    const Model::Forward fwd = model.forward(batch.images, ag::BnMode::kEval);
    const Tensor& s2 = fwd.outputs.s2.value();
    const std::int64_t h = s2.dim(2), w = s2.dim(3);
    for (std::size_t i = start; i < stop; ++i) {
      Tensor prob({h, w});
      const double* src = s2.data() + static_cast<std::int64_t>(i - start) * h * w;
      std::copy(src, src + h * w, prob.data());
      preds.push_back({records[i].id, std::move(prob)});
    }
  }
  return preds;
}

}  // namespace

MetricReport evaluate_model(Model& model, const TrainConfig& config, const std::string& data_root) {
  std::vector<DatasetRecord> records = resolve_dataset(data_root, config.image_size, config.seed);
  const std::vector<Prediction> preds = predict_records(model, records, config.batch_size);
  return evaluate_dataset(preds, records);
}

double mean_dsc(Model& model, const std::vector<DatasetRecord>& records, std::int64_t batch_size) {
  if (records.empty()) throw ValidationError("mean_dsc: empty record list");
  const std::vector<Prediction> preds = predict_records(model, records, batch_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Tensor p_bin(preds[i].prob.shape());
    for (std::int64_t k = 0; k < p_bin.numel(); ++k) {
      p_bin[k] = preds[i].prob[k] > 0.5 ? 1.0 : 0.0;
    }
    acc += dsc(p_bin, records[i].mask.pixels);
  }
  return acc / static_cast<double>(records.size());
}

}  // namespace bcsnet
