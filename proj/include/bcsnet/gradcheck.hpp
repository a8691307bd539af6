#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcsnet/config.hpp"

namespace bcsnet {

struct GradCheckEntry {
  std::string param;
  std::int64_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0;
  bool pass = false;
  std::vector<std::string> failures;  // "param[index]" with rel_err > tolerance
};

/// Central finite differences (step 1e-4) of the total training loss
/// against the analytic gradients for n_params sampled scalar parameters.
/// Every learnable context gain is always included, plus at least one
/// parameter from each module group (encoder, boundary head, semantic
/// head, spatial attention, fusion, side outputs). Requires a desk-scale
/// config: image_size <= 32 and every encoder width <= 8.
GradCheckReport gradcheck(const TrainConfig& config, int n_params, std::uint64_t seed);

constexpr double kGradCheckTolerance = 1e-3;

}  // namespace bcsnet
