#include "bcsnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bcsnet/errors.hpp"
#include "bcsnet/losses.hpp"
#include "bcsnet/rng.hpp"
#include "bcsnet/train.hpp"

namespace bcsnet {

GradCheckReport gradcheck(const TrainConfig& config, int n_params, std::uint64_t seed) {
  config.validate();
  if (config.image_size > 32) {
    throw ValidationError("gradcheck requires image_size <= 32, got " +
                          std::to_string(config.image_size));
  }
  for (std::int64_t c : config.encoder_channels) {
    if (c > 8) {
      throw ValidationError("gradcheck requires encoder channels <= 8, got " + std::to_string(c));
    }
  }
  if (n_params < 1) throw ValidationError("gradcheck needs n_params >= 1");

  Model model = Model::init(model_config_from(config), config.seed);

  // A fixed two-record batch keeps batch statistics well conditioned.
  std::vector<DatasetRecord> records = resolve_dataset(config.data, config.image_size, config.seed);
  std::vector<std::size_t> idx{0, records.size() > 1 ? std::size_t{1} : std::size_t{0}};
  const Batch batch = make_batch(records, idx);

  const auto loss_value = [&]() {
    ag::NoGradGuard ng;
    const Model::Forward fwd = model.forward(batch.images, ag::BnMode::kTrainFrozen);
    return total_loss(fwd.outputs, batch.masks, batch.boundaries).total.item();
  };

  // Analytic gradients in one reverse pass.
  model.zero_grads();
  {
    const Model::Forward fwd = model.forward(batch.images, ag::BnMode::kTrainFrozen);
    const LossTerms terms = total_loss(fwd.outputs, batch.masks, batch.boundaries);
    ag::backward(terms.total);
  }

  // Sample targets: every sigma, then one parameter per module group, then
  // random draws up to n_params.
  Rng rng(Rng::mix(seed, 0xC0FFEE));
  auto& params = model.params();
  std::vector<std::string> names;
  for (const auto& [name, var] : params) names.push_back(name);

  std::set<std::pair<std::string, std::int64_t>> chosen;
  for (const auto& name : names) {
    if (name.find(".sigma") != std::string::npos) chosen.insert({name, 0});
  }
  const std::vector<std::string> groups{"encoder.", "ba.", "sg.", ".sa.", ".fuse.", ".side."};
  for (const std::string& group : groups) {
    std::vector<std::string> members;
    for (const auto& name : names) {
      if (name.find(group) != std::string::npos) members.push_back(name);
    }
    if (members.empty()) continue;
    const std::string& pick = members[rng.below(members.size())];
    const std::int64_t index =
        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(params.at(pick).value().numel())));
    chosen.insert({pick, index});
  }
  while (static_cast<int>(chosen.size()) < n_params) {
    const std::string& pick = names[rng.below(names.size())];
    const std::int64_t index =
        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(params.at(pick).value().numel())));
    chosen.insert({pick, index});
  }

  constexpr double kStep = 1e-4;
  GradCheckReport report;
  for (const auto& [name, index] : chosen) {
    ag::Var& var = params.at(name);
    const double saved = var.value()[index];

    var.mutable_value()[index] = saved + kStep;
    const double plus = loss_value();
    var.mutable_value()[index] = saved - kStep;
    const double minus = loss_value();
    var.mutable_value()[index] = saved;

    GradCheckEntry entry;
    entry.param = name;
    entry.index = index;
    entry.numeric = (plus - minus) / (2.0 * kStep);
    entry.analytic = var.has_grad() ? var.grad()[index] : 0.0;
    const double denom = std::max(std::abs(entry.analytic), std::abs(entry.numeric));
    entry.rel_err = denom < 1e-8 ? 0.0 : std::abs(entry.analytic - entry.numeric) / denom;
    report.max_rel_err = std::max(report.max_rel_err, entry.rel_err);
    if (entry.rel_err > kGradCheckTolerance) {
      report.failures.push_back(name + "[" + std::to_string(index) + "]");
    }
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.failures.empty();
  return report;
}

}  // namespace bcsnet
