#pragma once

#include <cstdint>
#include <string>

#include "bcsnet/config.hpp"
#include "bcsnet/data.hpp"
#include "bcsnet/model.hpp"

namespace bcsnet {

// Panel layout: input, ground truth, S2, Sb, Ss, and the level-2 spatial
// attention heat map, separated by fixed gutters with a label strip below.
constexpr std::int64_t kVizPanels = 6;
constexpr std::int64_t kVizGutter = 4;
constexpr std::int64_t kVizLabelHeight = 12;

inline std::int64_t viz_canvas_width(std::int64_t image_w) {
  return kVizPanels * image_w + (kVizPanels + 1) * kVizGutter;
}
inline std::int64_t viz_canvas_height(std::int64_t image_h) {
  return image_h + kVizLabelHeight + 2 * kVizGutter + 2;
}

struct VizStats {
  double mean_sb_on_boundary = 0;
  double mean_sb_off_boundary = 0;
};

/// Renders the six labeled panels as one RGB PNG and reports how strongly
/// the boundary map separates contour pixels from the rest.
VizStats render_visualization(Model& model, const TrainConfig& config, const DatasetRecord& record,
                              const std::string& out_path);

}  // namespace bcsnet
