#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bcsnet {

/// 8-bit single-channel raster, row-major.
struct GrayImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::int64_t y, std::int64_t x) const {
    return pixels[static_cast<std::size_t>(y * width + x)];
  }
};

/// 8-bit interleaved RGB raster, row-major.
struct RgbImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // 3 bytes per pixel
};

/// Decodes an 8-bit PNG. RGB(A) inputs are reduced to grayscale with
/// BT.601 luma; palette and low-bit-depth images are expanded first.
GrayImage read_png_gray(const std::string& path);

void write_png_gray(const std::string& path, const GrayImage& img);
void write_png_rgb(const std::string& path, const RgbImage& img);

}  // namespace bcsnet
