#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bcsnet/checkpoint.hpp"
#include "bcsnet/config.hpp"
#include "bcsnet/errors.hpp"
#include "bcsnet/gradcheck.hpp"
#include "bcsnet/train.hpp"
#include "bcsnet/image_io.hpp"
#include "bcsnet/viz.hpp"

using namespace bcsnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "bcsnet_train_tests";
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.image_size = 16;
  c.batch_size = 2;
  c.epochs = 2;
  c.encoder_channels = {4, 4, 8, 8};
  c.blocks_per_stage = 1;
  c.data = "synthetic:3";
  c.checkpoint_out.clear();
  return c;
}

}  // namespace

TEST_CASE("config parsing applies values and rejects unknown keys") {
  const TrainConfig c = parse_train_config(
      "image_size = 32\n"
      "batch_size = 4  # inline comment\n"
      "learning_rate = 1e-3\n"
      "seed = 9\n"
      "disable_aggc = true\n"
      "encoder_channels = [4, 8, 16, 32]\n"
      "decoder_channels = [0, 0, 8]\n"
      "data = \"synthetic:5\"\n");
  CHECK(c.image_size == 32);
  CHECK(c.batch_size == 4);
  CHECK(c.learning_rate == doctest::Approx(1e-3));
  CHECK(c.seed == 9);
  CHECK(c.disable_aggc);
  CHECK_FALSE(c.disable_sg);
  CHECK(c.encoder_channels == std::array<std::int64_t, 4>{4, 8, 16, 32});
  CHECK(c.resolved_decoder_channels() == std::array<std::int64_t, 3>{32, 16, 8});
  CHECK(c.epochs == 200);  // default preserved

  CHECK_THROWS_WITH_AS(parse_train_config("learning_rte = 1e-3\n"),
                       doctest::Contains("unknown key"), ValidationError);
  CHECK_THROWS_AS(parse_train_config("image_size = 50\n"), ValidationError);
  CHECK_THROWS_AS(parse_train_config("batch_size = zero\n"), ValidationError);
  CHECK_THROWS_AS(parse_train_config("data = unquoted\n"), ValidationError);
  CHECK_THROWS_AS(parse_train_config("seed = 1\nseed = 2\n"), ValidationError);
}

TEST_CASE("config serialization round-trips") {
  TrainConfig c = tiny_config();
  c.learning_rate = 2.5e-4;
  c.curve_out = "curve.csv";
  const TrainConfig back = parse_train_config(serialize_train_config(c));
  CHECK(back.image_size == c.image_size);
  CHECK(back.batch_size == c.batch_size);
  CHECK(back.epochs == c.epochs);
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.seed == c.seed);
  CHECK(back.encoder_channels == c.encoder_channels);
  CHECK(back.decoder_channels == c.decoder_channels);
  CHECK(back.data == c.data);
  CHECK(back.curve_out == c.curve_out);
}

TEST_CASE("model init is deterministic and parameter names are stable") {
  const ModelConfig mc = model_config_from(tiny_config());
  Model a = Model::init(mc, 5);
  Model b = Model::init(mc, 5);
  REQUIRE(a.params().size() == b.params().size());
  for (const auto& [name, var] : a.params()) {
    CHECK(var.value().vec() == b.params().at(name).value().vec());
  }
  CHECK(a.params().count("bcsr4.sigma") == 1);
  CHECK(a.params().count("bcsr3.sigma") == 1);
  CHECK(a.params().count("bcsr2.sigma") == 1);
  CHECK(a.params().at("bcsr2.sigma").value()[0] == 0.0);
  CHECK(a.buffers().count("encoder.s1.b0.bn.rm") == 1);
}

TEST_CASE("resolve_dataset handles synthetic specs and errors") {
  const auto records = resolve_dataset("synthetic:4", 32, 7);
  CHECK(records.size() == 4);
  CHECK(records[0].slice.height() == 32);
  CHECK_THROWS_AS(resolve_dataset("synthetic:zero", 32, 7), ValidationError);
  CHECK_THROWS_AS(resolve_dataset((temp_dir() / "missing_dir").string(), 32, 7), IoError);
}

TEST_CASE("train with zero epochs yields initialization checkpoint and empty curve") {
  TrainConfig c = tiny_config();
  c.epochs = 0;
  c.checkpoint_out = (temp_dir() / "init.ckpt").string();
  const TrainResult result = train(c);
  CHECK(result.curve.empty());

  const Checkpoint ckpt = load_checkpoint(c.checkpoint_out);
  CHECK(ckpt.epoch == 0);
  const Model fresh = Model::init(model_config_from(c), c.seed);
  for (const auto& [name, var] : fresh.params()) {
    CHECK(ckpt.tensors.at(name).vec() == var.value().vec());
  }
}

TEST_CASE("training is deterministic per (config, seed)") {
  TrainConfig c = tiny_config();
  const TrainResult a = train(c);
  const TrainResult b = train(c);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(std::abs(a.curve[i].mean.total - b.curve[i].mean.total) <= 1e-6);
    CHECK(std::isfinite(a.curve[i].mean.total));
  }
  for (const auto& [name, var] : a.model.params()) {
    const Tensor& other = b.model.params().at(name).value();
    for (std::int64_t k = 0; k < other.numel(); ++k) {
      CHECK(std::abs(var.value()[k] - other[k]) <= 1e-6);
    }
  }

  TrainConfig c2 = tiny_config();
  c2.seed = 99;
  const TrainResult d = train(c2);
  CHECK(d.curve.back().mean.total != a.curve.back().mean.total);
}

TEST_CASE("checkpoint save/load round-trips byte-identically") {
  TrainConfig c = tiny_config();
  c.epochs = 1;
  c.checkpoint_out = (temp_dir() / "round.ckpt").string();
  train(c);

  const Checkpoint loaded = load_checkpoint(c.checkpoint_out);
  const std::string second = (temp_dir() / "round2.ckpt").string();
  save_checkpoint(second, loaded);

  std::ifstream f1(c.checkpoint_out, std::ios::binary);
  std::ifstream f2(second, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE_FALSE(b1.empty());
  CHECK(b1 == b2);

  // Restored models reproduce the stored forward pass bitwise.
  Model restored = restore_model(loaded);
  const auto records = resolve_dataset(c.data, c.image_size, c.seed);
  const Batch batch = make_batch(records, {0});
  ag::NoGradGuard ng;
  Model trained = restore_model(load_checkpoint(c.checkpoint_out));
  const auto out1 = trained.forward(batch.images, ag::BnMode::kEval);
  const auto out2 = restored.forward(batch.images, ag::BnMode::kEval);
  CHECK(out1.outputs.s2.value().vec() == out2.outputs.s2.value().vec());
}

TEST_CASE("training aborts with a named component when the loss explodes") {
  TrainConfig c = tiny_config();
  c.epochs = 50;
  // Normalization keeps activations finite for any sane step size, so the
  // blow-up needs weights that overflow double range inside one conv.
  c.learning_rate = 1e300;
  try {
    train(c);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    const std::string msg = e.what();
    bool names_component = false;
    LossBreakdown probe;
    for (const auto& [name, value] : probe.components()) {
      if (msg.find(name) != std::string::npos) names_component = true;
    }
    CHECK(names_component);
  }
}

TEST_CASE("loss curve CSV is written when configured") {
  TrainConfig c = tiny_config();
  c.epochs = 2;
  c.curve_out = (temp_dir() / "curve.csv").string();
  train(c);
  std::ifstream f(c.curve_out);
  REQUIRE(f.good());
  std::string header;
  std::getline(f, header);
  CHECK(header.substr(0, 12) == "epoch,total,");
  int rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("predict_image enforces the configured size") {
  TrainConfig c = tiny_config();
  c.epochs = 0;
  const TrainResult result = train(c);
  Model model = result.model;

  const auto wrong = synth_blobs(1, 32, 32, 3);
  CHECK_THROWS_WITH_AS(predict_image(model, c, wrong[0].slice), doctest::Contains("16x16"),
                       ValidationError);

  const auto right = synth_blobs(1, 16, 16, 3);
  const PredictResult pred = predict_image(model, c, right[0].slice);
  CHECK(pred.prob.shape() == std::vector<std::int64_t>{16, 16});
  for (std::int64_t i = 0; i < pred.prob.numel(); ++i) {
    CHECK(pred.prob[i] >= 0.0);
    CHECK(pred.prob[i] <= 1.0);
    CHECK((pred.mask_bin[i] == 0.0 || pred.mask_bin[i] == 1.0));
  }

  // Determinism: the same inputs produce identical outputs.
  const PredictResult again = predict_image(model, c, right[0].slice);
  CHECK(again.prob.vec() == pred.prob.vec());
}

TEST_CASE("gradcheck rejects configs beyond desk scale") {
  TrainConfig big = tiny_config();
  big.image_size = 64;
  CHECK_THROWS_AS(gradcheck(big, 10, 1), ValidationError);
  TrainConfig wide = tiny_config();
  wide.encoder_channels = {16, 16, 16, 16};
  CHECK_THROWS_AS(gradcheck(wide, 10, 1), ValidationError);
}

TEST_CASE("gradcheck matches finite differences on a tiny model") {
  TrainConfig c = tiny_config();
  c.data = "synthetic:2";
  const GradCheckReport report = gradcheck(c, 24, 7);
  CHECK(report.entries.size() >= 24);
  CHECK(report.max_rel_err <= kGradCheckTolerance);
  CHECK(report.pass);
  CHECK(report.failures.empty());

  // Every sigma is present and receives a nonzero gradient signal.
  int sigmas = 0;
  for (const auto& e : report.entries) {
    if (e.param.find(".sigma") != std::string::npos) {
      ++sigmas;
      CHECK(e.analytic != 0.0);
    }
  }
  CHECK(sigmas == 3);

  // Group coverage: every module family appears among the checked entries.
  for (const std::string& group : {"encoder.", "ba.", "sg.", ".sa.", ".fuse.", ".side."}) {
    bool found = false;
    for (const auto& e : report.entries) {
      if (e.param.find(group) != std::string::npos) found = true;
    }
    CAPTURE(group);
    CHECK(found);
  }
}

TEST_CASE("visualization panel has the documented layout") {
  TrainConfig c = tiny_config();
  c.epochs = 0;
  TrainResult result = train(c);
  const auto records = resolve_dataset(c.data, c.image_size, c.seed);

  const std::string out = (temp_dir() / "panel.png").string();
  render_visualization(result.model, c, records[0], out);

  const GrayImage img = read_png_gray(out);
  CHECK(img.width == viz_canvas_width(16));
  CHECK(img.height == viz_canvas_height(16));
  CHECK(viz_canvas_width(16) == 6 * 16 + 7 * kVizGutter);
}
