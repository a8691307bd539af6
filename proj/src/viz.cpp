#include "bcsnet/viz.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "bcsnet/errors.hpp"
#include "bcsnet/image_io.hpp"

namespace bcsnet {

namespace {

// 5x7 bitmap glyphs for the panel labels.
const std::uint8_t* glyph(char c) {
  static const std::uint8_t kI[7] = {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x1F};
  static const std::uint8_t kN[7] = {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11};
  static const std::uint8_t kP[7] = {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10};
  static const std::uint8_t kU[7] = {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E};
  static const std::uint8_t kT[7] = {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04};
  static const std::uint8_t kM[7] = {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11};
  static const std::uint8_t kA[7] = {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11};
  static const std::uint8_t kS[7] = {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E};
  static const std::uint8_t kK[7] = {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11};
  static const std::uint8_t kB[7] = {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E};
  static const std::uint8_t k2[7] = {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F};
  switch (c) {
    case 'I': return kI;
    case 'N': return kN;
    case 'P': return kP;
    case 'U': return kU;
    case 'T': return kT;
    case 'M': return kM;
    case 'A': return kA;
    case 'S': return kS;
    case 'K': return kK;
    case 'B': return kB;
    case '2': return k2;
    default: return nullptr;
  }
}

struct Canvas {
  std::int64_t h, w;
  std::vector<std::uint8_t> rgb;

  void set(std::int64_t y, std::int64_t x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    const std::size_t i = 3 * static_cast<std::size_t>(y * w + x);
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
};

void draw_text(Canvas& canvas, std::int64_t y, std::int64_t x, const std::string& text) {
  for (char c : text) {
    const std::uint8_t* rows = glyph(c);
    if (rows) {
      for (int gy = 0; gy < 7; ++gy) {
        for (int gx = 0; gx < 5; ++gx) {
          if (rows[gy] & (1 << (4 - gx))) canvas.set(y + gy, x + gx, 230, 230, 230);
        }
      }
    }
    x += 6;
  }
}

void draw_gray_panel(Canvas& canvas, std::int64_t y0, std::int64_t x0, const Tensor& map) {
  for (std::int64_t y = 0; y < map.dim(0); ++y) {
    for (std::int64_t x = 0; x < map.dim(1); ++x) {
      const auto v = static_cast<std::uint8_t>(
          std::lround(std::clamp(map.at(y, x), 0.0, 1.0) * 255.0));
      canvas.set(y0 + y, x0 + x, v, v, v);
    }
  }
}

void draw_heat_panel(Canvas& canvas, std::int64_t y0, std::int64_t x0, const Tensor& map) {
  for (std::int64_t y = 0; y < map.dim(0); ++y) {
    for (std::int64_t x = 0; x < map.dim(1); ++x) {
      const double v = std::clamp(map.at(y, x), 0.0, 1.0);
      const double r = std::min(1.0, 3.0 * v);
      const double g = std::clamp(3.0 * v - 1.0, 0.0, 1.0);
      const double b = std::clamp(3.0 * v - 2.0, 0.0, 1.0);
      canvas.set(y0 + y, x0 + x, static_cast<std::uint8_t>(std::lround(r * 255.0)),
                 static_cast<std::uint8_t>(std::lround(g * 255.0)),
                 static_cast<std::uint8_t>(std::lround(b * 255.0)));
    }
  }
}

Tensor plane_from(const Tensor& nchw) {
  return Tensor({nchw.dim(2), nchw.dim(3)},
                std::vector<double>(nchw.vec().begin(), nchw.vec().end()));
}

}  // namespace

VizStats render_visualization(Model& model, const TrainConfig& config, const DatasetRecord& record,
                              const std::string& out_path) {
  const std::int64_t s = config.image_size;
  if (record.slice.height() != s || record.slice.width() != s) {
    throw ValidationError("record is " + std::to_string(record.slice.height()) + "x" +
                          std::to_string(record.slice.width()) + " but the checkpoint expects " +
                          std::to_string(s) + "x" + std::to_string(s));
  }

  Tensor images({1, 3, s, s});
  std::copy(record.slice.pixels.data(), record.slice.pixels.data() + 3 * s * s, images.data());

  ag::NoGradGuard ng;
  Model::Forward fwd = model.forward(images, ag::BnMode::kEval);
  const Tensor s2 = plane_from(fwd.outputs.s2.value());
  const Tensor sb = plane_from(fwd.outputs.s_b.value());
  const Tensor ss = plane_from(fwd.outputs.s_s.value());
  const Tensor a_s =
      plane_from(ag::bilinear_resize(fwd.internals.spatial_attention_l2, s, s).value());

  Tensor input({s, s});
  std::copy(record.slice.pixels.data(), record.slice.pixels.data() + s * s, input.data());

  Canvas canvas{viz_canvas_height(s), viz_canvas_width(s), {}};
  canvas.rgb.assign(static_cast<std::size_t>(3 * canvas.h * canvas.w), 24);

  const std::array<const Tensor*, kVizPanels> panels{&input, &record.mask.pixels, &s2,
                                                     &sb,    &ss,                 &a_s};
  const std::array<const char*, kVizPanels> labels{"INPUT", "MASK", "S2", "SB", "SS", "AS"};
  for (std::int64_t p = 0; p < kVizPanels; ++p) {
    const std::int64_t x0 = kVizGutter + p * (s + kVizGutter);
    if (p + 1 == kVizPanels) {
      draw_heat_panel(canvas, kVizGutter, x0, *panels[static_cast<std::size_t>(p)]);
    } else {
      draw_gray_panel(canvas, kVizGutter, x0, *panels[static_cast<std::size_t>(p)]);
    }
    draw_text(canvas, kVizGutter + s + 3, x0, labels[static_cast<std::size_t>(p)]);
  }

  write_png_rgb(out_path, RgbImage{canvas.h, canvas.w, std::move(canvas.rgb)});

  VizStats stats;
  double on = 0.0, off = 0.0;
  std::int64_t n_on = 0, n_off = 0;
  for (std::int64_t i = 0; i < s * s; ++i) {
    if (record.boundary.pixels[i] != 0.0) {
      on += sb[i];
      ++n_on;
    } else {
      off += sb[i];
      ++n_off;
    }
  }
  stats.mean_sb_on_boundary = n_on > 0 ? on / static_cast<double>(n_on) : 0.0;
  stats.mean_sb_off_boundary = n_off > 0 ? off / static_cast<double>(n_off) : 0.0;
  return stats;
}

}  // namespace bcsnet
