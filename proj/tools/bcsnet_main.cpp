#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "bcsnet/checkpoint.hpp"
#include "bcsnet/config.hpp"
#include "bcsnet/data.hpp"
#include "bcsnet/errors.hpp"
#include "bcsnet/gradcheck.hpp"
#include "bcsnet/metrics.hpp"
#include "bcsnet/train.hpp"
#include "bcsnet/viz.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Boundary-context-semantic segmentation for small grayscale images"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::simple);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  std::string train_config_path;
  train_cmd->add_option("--config", train_config_path, "Path to the key=value config file")
      ->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  std::string eval_ckpt, eval_data, eval_out;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset root with images/ and masks/")->required();
  eval_cmd->add_option("--out", eval_out, "Output CSV path")->required();

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Segment one image with a checkpoint");
  std::string pred_ckpt, pred_image, pred_out;
  predict_cmd->add_option("--ckpt", pred_ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("--image", pred_image, "Input PNG")->required();
  predict_cmd->add_option("--out", pred_out,
                          "Output probability PNG; the 0.5-thresholded mask lands next to it "
                          "with an _mask suffix")
      ->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string grad_config_path;
  int grad_n = 50;
  std::uint64_t grad_seed = 1;
  grad_cmd->add_option("--config", grad_config_path, "Desk-scale config file")->required();
  grad_cmd->add_option("--n", grad_n, "Number of sampled parameters (default 50)");
  grad_cmd->add_option("--seed", grad_seed, "Sampling seed");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic blob dataset");
  std::int64_t synth_n = 0, synth_size = 64;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth_cmd->add_option("--n", synth_n, "Number of records")->required();
  synth_cmd->add_option("--size", synth_size, "Square image size (multiple of 16)");
  synth_cmd->add_option("--seed", synth_seed, "Generator seed");
  synth_cmd->add_option("--out", synth_out, "Output dataset root")->required();

  // viz
  auto* viz_cmd = app.add_subcommand("viz", "Render the six-panel inspection image");
  std::string viz_ckpt, viz_image, viz_mask, viz_out;
  viz_cmd->add_option("--ckpt", viz_ckpt, "Checkpoint file")->required();
  viz_cmd->add_option("--image", viz_image, "Input PNG")->required();
  viz_cmd->add_option("--mask", viz_mask, "Ground-truth mask PNG")->required();
  viz_cmd->add_option("--out", viz_out, "Output panel PNG")->required();

  CLI11_PARSE(app, argc, argv);

  if (train_cmd->parsed()) {
    const bcsnet::TrainConfig config = bcsnet::load_train_config(train_config_path);
    const bcsnet::TrainResult result = bcsnet::train(config);
    if (!result.curve.empty()) {
      std::printf("epoch %lld total loss %.6f\n",
                  static_cast<long long>(result.curve.back().epoch),
                  result.curve.back().mean.total);
    }
    if (!config.checkpoint_out.empty()) {
      std::printf("checkpoint written to %s\n", config.checkpoint_out.c_str());
    }
    return 0;
  }

  if (eval_cmd->parsed()) {
    const bcsnet::Checkpoint ckpt = bcsnet::load_checkpoint(eval_ckpt);
    bcsnet::Model model = bcsnet::restore_model(ckpt);
    const bcsnet::MetricReport report = bcsnet::evaluate_model(model, ckpt.config, eval_data);
    bcsnet::write_metric_csv(report, eval_out);
    std::printf("mean dsc %.4f prec %.4f recall %.4f sm %.4f ephi %.4f mae %.4f over %zu images\n",
                report.mean.dsc, report.mean.prec, report.mean.recall, report.mean.sm,
                report.mean.ephi, report.mean.mae, report.rows.size());
    return 0;
  }

  if (predict_cmd->parsed()) {
    const bcsnet::Checkpoint ckpt = bcsnet::load_checkpoint(pred_ckpt);
    bcsnet::Model model = bcsnet::restore_model(ckpt);
    const bcsnet::CTSlice slice = bcsnet::load_slice(pred_image);
    const bcsnet::PredictResult result = bcsnet::predict_image(model, ckpt.config, slice);
    const std::string mask_path = bcsnet::write_prediction(result, pred_out);
    std::printf("probability map: %s\nbinary mask: %s\n", pred_out.c_str(), mask_path.c_str());
    return 0;
  }

  if (grad_cmd->parsed()) {
    const bcsnet::TrainConfig config = bcsnet::load_train_config(grad_config_path);
    const bcsnet::GradCheckReport report = bcsnet::gradcheck(config, grad_n, grad_seed);
    std::printf("%-28s %8s %14s %14s %10s\n", "parameter", "index", "analytic", "numeric",
                "rel_err");
    for (const auto& e : report.entries) {
      std::printf("%-28s %8lld %14.6e %14.6e %10.2e\n", e.param.c_str(),
                  static_cast<long long>(e.index), e.analytic, e.numeric, e.rel_err);
    }
    std::printf("max relative error %.3e over %zu parameters\n", report.max_rel_err,
                report.entries.size());
    if (!report.pass) {
      std::string names;
      for (const auto& f : report.failures) names += (names.empty() ? "" : ", ") + f;
      throw bcsnet::ValidationError("gradient check failed for: " + names);
    }
    return 0;
  }

  if (synth_cmd->parsed()) {
    const auto records = bcsnet::synth_blobs(synth_n, synth_size, synth_size, synth_seed);
    bcsnet::save_dataset_dir(synth_out, records);
    std::printf("wrote %zu records under %s\n", records.size(), synth_out.c_str());
    return 0;
  }

  if (viz_cmd->parsed()) {
    const bcsnet::Checkpoint ckpt = bcsnet::load_checkpoint(viz_ckpt);
    bcsnet::Model model = bcsnet::restore_model(ckpt);
    bcsnet::DatasetRecord record;
    record.slice = bcsnet::load_slice(viz_image);
    record.mask = bcsnet::load_mask(viz_mask);
    if (record.mask.pixels.dim(0) != record.slice.height() ||
        record.mask.pixels.dim(1) != record.slice.width()) {
      throw bcsnet::ValidationError("mask size does not match the image");
    }
    record.boundary = bcsnet::derive_boundary(record.mask);
    record.id = "viz";
    record = bcsnet::resize_record(record, ckpt.config.image_size, ckpt.config.image_size);
    const bcsnet::VizStats stats = bcsnet::render_visualization(model, ckpt.config, record, viz_out);
    std::printf("panel written to %s (Sb on/off boundary: %.3f / %.3f)\n", viz_out.c_str(),
                stats.mean_sb_on_boundary, stats.mean_sb_off_boundary);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
