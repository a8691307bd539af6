#include "bcsnet/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "bcsnet/errors.hpp"

namespace bcsnet {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

GrayImage read_png_gray(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image file: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng allocation failed");
  }

  std::vector<std::uint8_t> interleaved;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int channels = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);

  if (w == 0 || h == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("zero-sized image: " + path);
  }

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG channel layout in " + path);
  }

  interleaved.resize(static_cast<std::size_t>(w) * h * static_cast<std::size_t>(channels));
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) {
    rows[y] = interleaved.data() + static_cast<std::size_t>(y) * w * static_cast<std::size_t>(channels);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage out;
  out.height = static_cast<std::int64_t>(h);
  out.width = static_cast<std::int64_t>(w);
  out.pixels.resize(static_cast<std::size_t>(w) * h);
  if (channels == 1) {
    out.pixels = std::move(interleaved);
  } else {
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      const double r = interleaved[3 * i], g = interleaved[3 * i + 1], b = interleaved[3 * i + 2];
      const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
      out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::min(255.0, std::max(0.0, luma))));
    }
  }
  return out;
}

namespace {

void write_png(const std::string& path, std::int64_t h, std::int64_t w, int color_type,
               int channels, const std::uint8_t* data) {
  if (h <= 0 || w <= 0) throw ValidationError("cannot write zero-sized image: " + path);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open file for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng allocation failed");
  }

  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::int64_t y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w * channels);
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray(const std::string& path, const GrayImage& img) {
  if (static_cast<std::int64_t>(img.pixels.size()) != img.height * img.width) {
    throw ValidationError("gray image buffer does not match its dimensions");
  }
  write_png(path, img.height, img.width, PNG_COLOR_TYPE_GRAY, 1, img.pixels.data());
}

void write_png_rgb(const std::string& path, const RgbImage& img) {
  if (static_cast<std::int64_t>(img.pixels.size()) != img.height * img.width * 3) {
    throw ValidationError("rgb image buffer does not match its dimensions");
  }
  write_png(path, img.height, img.width, PNG_COLOR_TYPE_RGB, 3, img.pixels.data());
}

}  // namespace bcsnet
