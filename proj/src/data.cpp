#include "bcsnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "bcsnet/errors.hpp"
#include "bcsnet/image_io.hpp"
#include "bcsnet/rng.hpp"

namespace fs = std::filesystem;

namespace bcsnet {

CTSlice load_slice(const std::string& path) {
  const GrayImage img = read_png_gray(path);
  if (img.height <= 0 || img.width <= 0) throw ValidationError("zero-sized image: " + path);
  Tensor pixels({3, img.height, img.width});
  const std::int64_t plane = img.height * img.width;
  for (std::int64_t i = 0; i < plane; ++i) {
    const double v = static_cast<double>(img.pixels[static_cast<std::size_t>(i)]) / 255.0;
    pixels[i] = v;
    pixels[plane + i] = v;
    pixels[2 * plane + i] = v;
  }
  return CTSlice{std::move(pixels), fs::path(path).stem().string()};
}

SegMask load_mask(const std::string& path) {
  const GrayImage img = read_png_gray(path);
  if (img.height <= 0 || img.width <= 0) throw ValidationError("zero-sized image: " + path);
  Tensor pixels({img.height, img.width});
  for (std::int64_t i = 0; i < pixels.numel(); ++i) {
    pixels[i] = img.pixels[static_cast<std::size_t>(i)] > 127 ? 1.0 : 0.0;
  }
  return SegMask{std::move(pixels)};
}

BoundaryMask derive_boundary(const SegMask& mask) {
  const Tensor& m = mask.pixels;
  const std::int64_t h = m.dim(0), w = m.dim(1);
  Tensor out({h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (m.at(y, x) == 0.0) continue;
      // Erosion by the 3x3 cross; out-of-image neighbors are background.
      const bool survives = y > 0 && y + 1 < h && x > 0 && x + 1 < w && m.at(y - 1, x) != 0.0 &&
                            m.at(y + 1, x) != 0.0 && m.at(y, x - 1) != 0.0 && m.at(y, x + 1) != 0.0;
      if (!survives) out.at(y, x) = 1.0;
    }
  }
  return BoundaryMask{std::move(out)};
}

namespace {

Tensor resize_bilinear_plane(const Tensor& src, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t h = src.dim(0), w = src.dim(1);
  Tensor dst({out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
    const double ty = fy - static_cast<double>(y0);
    std::int64_t y1 = std::clamp<std::int64_t>(y0 + 1, 0, h - 1);
    y0 = std::clamp<std::int64_t>(y0, 0, h - 1);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
      const double tx = fx - static_cast<double>(x0);
      std::int64_t x1 = std::clamp<std::int64_t>(x0 + 1, 0, w - 1);
      x0 = std::clamp<std::int64_t>(x0, 0, w - 1);
      const double top = src.at(y0, x0) * (1.0 - tx) + src.at(y0, x1) * tx;
      const double bot = src.at(y1, x0) * (1.0 - tx) + src.at(y1, x1) * tx;
      dst.at(oy, ox) = top * (1.0 - ty) + bot * ty;
    }
  }
  return dst;
}

Tensor resize_nearest_plane(const Tensor& src, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t h = src.dim(0), w = src.dim(1);
  Tensor dst({out_h, out_w});
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const std::int64_t sy =
        std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((static_cast<double>(oy) + 0.5) *
                                                                      static_cast<double>(h) /
                                                                      static_cast<double>(out_h))),
                                 0, h - 1);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const std::int64_t sx =
          std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((static_cast<double>(ox) + 0.5) *
                                                                        static_cast<double>(w) /
                                                                        static_cast<double>(out_w))),
                                   0, w - 1);
      dst.at(oy, ox) = src.at(sy, sx);
    }
  }
  return dst;
}

void check_multiple_of_16(std::int64_t h, std::int64_t w, const std::string& what) {
  if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0) {
    throw ValidationError(what + " must be a positive multiple of 16 per side, got " +
                          std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

DatasetRecord resize_record(const DatasetRecord& record, std::int64_t out_h, std::int64_t out_w) {
  check_multiple_of_16(out_h, out_w, "resize target");
  const std::int64_t h = record.slice.height(), w = record.slice.width();
  if (h == out_h && w == out_w) return record;

  // Channels are identical by invariant, so resize one plane and replicate.
  const Tensor plane = record.slice.pixels.reshaped({3, h, w});
  Tensor one({h, w});
  std::copy(plane.data(), plane.data() + h * w, one.data());
  const Tensor resized = resize_bilinear_plane(one, out_h, out_w);

  Tensor pixels({3, out_h, out_w});
  for (int c = 0; c < 3; ++c) {
    std::copy(resized.data(), resized.data() + out_h * out_w, pixels.data() + c * out_h * out_w);
  }

  DatasetRecord out;
  out.slice = CTSlice{std::move(pixels), record.slice.source_id};
  out.mask = SegMask{resize_nearest_plane(record.mask.pixels, out_h, out_w)};
  out.boundary = derive_boundary(out.mask);
  out.id = record.id;
  return out;
}

DatasetSplit split_dataset(std::vector<DatasetRecord> records, double test_fraction,
                           std::uint64_t seed) {
  if (records.size() < 2) throw ValidationError("split_dataset requires at least 2 records");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(order[i], order[j]);
  }
  // Round half up.
  const std::size_t n_test = static_cast<std::size_t>(
      std::floor(test_fraction * static_cast<double>(n) + 0.5));

  DatasetSplit split;
  split.seed = seed;
  split.test.reserve(n_test);
  split.train.reserve(n - n_test);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_test) {
      split.test.push_back(std::move(records[order[i]]));
    } else {
      split.train.push_back(std::move(records[order[i]]));
    }
  }
  return split;
}

namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t, intensity;
};

double ellipse_cov(const Ellipse& e, double px, double py, double s) {
  const double dx = px - e.cx, dy = py - e.cy;
  const double u = (dx * e.cos_t + dy * e.sin_t) / (e.a * s);
  const double v = (-dx * e.sin_t + dy * e.cos_t) / (e.b * s);
  return u * u + v * v <= 1.0 ? 1.0 : 0.0;
}

}  // namespace

std::vector<DatasetRecord> synth_blobs(std::int64_t n, std::int64_t h, std::int64_t w,
                                       std::uint64_t seed) {
  if (n < 1) throw ValidationError("synth_blobs requires n >= 1");
  if (h <= 0 || w <= 0) throw ValidationError("synth_blobs requires a positive size");

  std::vector<DatasetRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  const double min_side = static_cast<double>(std::min(h, w));

  for (std::int64_t idx = 0; idx < n; ++idx) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(idx)));

    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(4));
    std::vector<Ellipse> blobs;
    blobs.reserve(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
      Ellipse e;
      e.cx = rng.uniform(0.2, 0.8) * static_cast<double>(w);
      e.cy = rng.uniform(0.2, 0.8) * static_cast<double>(h);
      e.a = rng.uniform(0.09, 0.22) * min_side;
      e.b = e.a * rng.uniform(0.55, 1.0);
      const double theta = rng.uniform(0.0, M_PI);
      e.cos_t = std::cos(theta);
      e.sin_t = std::sin(theta);
      e.intensity = rng.uniform(0.65, 0.9);
      blobs.push_back(e);
    }

    // Per-pixel background noise, drawn after the geometry so the
    // fraction-adjustment loop below never consumes randomness.
    Tensor noise({h, w});
    for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.uniform();

    Tensor cov({h, w});
    Tensor blob_val({h, w});
    double scale = 1.0;
    double frac = 0.0;
    bool ok = false;
    for (int attempt = 0; attempt < 24; ++attempt) {
      std::int64_t fg = 0;
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          // 4x4 supersampling anti-aliases blob edges.
          double hits = 0.0, best = 0.0, val = 0.0;
          for (const Ellipse& e : blobs) {
            double c = 0.0;
            for (int sy = 0; sy < 4; ++sy) {
              for (int sx = 0; sx < 4; ++sx) {
                const double px = static_cast<double>(x) + (sx + 0.5) / 4.0;
                const double py = static_cast<double>(y) + (sy + 0.5) / 4.0;
                c += ellipse_cov(e, px, py, scale);
              }
            }
            c /= 16.0;
            hits = std::max(hits, c);
            if (c > best) {
              best = c;
              val = e.intensity;
            }
          }
          cov.at(y, x) = hits;
          blob_val.at(y, x) = val;
          if (hits >= 0.5) ++fg;
        }
      }
      frac = static_cast<double>(fg) / static_cast<double>(h * w);
      if (frac < 0.02) {
        scale *= 1.35;
      } else if (frac > 0.5) {
        scale *= 0.8;
      } else {
        ok = true;
        break;
      }
    }
    if (!ok) {
      // Deterministic fallback: one centered disk with ~20% coverage.
      blobs.assign(1, Ellipse{static_cast<double>(w) / 2.0, static_cast<double>(h) / 2.0,
                              0.25 * min_side, 0.25 * min_side, 1.0, 0.0, 0.8});
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          double c = 0.0;
          for (int sy = 0; sy < 4; ++sy) {
            for (int sx = 0; sx < 4; ++sx) {
              c += ellipse_cov(blobs[0], static_cast<double>(x) + (sx + 0.5) / 4.0,
                               static_cast<double>(y) + (sy + 0.5) / 4.0, 1.0);
            }
          }
          cov.at(y, x) = c / 16.0;
          blob_val.at(y, x) = blobs[0].intensity;
        }
      }
    }

    Tensor pixels({3, h, w});
    Tensor mask({h, w});
    for (std::int64_t i = 0; i < h * w; ++i) {
      const double bg = 0.10 + 0.08 * noise[i];
      const double v = std::clamp(bg + (blob_val[i] - bg) * cov[i], 0.0, 1.0);
      pixels[i] = v;
      pixels[h * w + i] = v;
      pixels[2 * h * w + i] = v;
      mask[i] = cov[i] >= 0.5 ? 1.0 : 0.0;
    }

    DatasetRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04lld", static_cast<long long>(idx));
    rec.id = buf;
    rec.slice = CTSlice{std::move(pixels), rec.id};
    rec.mask = SegMask{std::move(mask)};
    rec.boundary = derive_boundary(rec.mask);
    out.push_back(std::move(rec));
  }
  return out;
}

void validate_record(const DatasetRecord& record) {
  const std::int64_t h = record.slice.height(), w = record.slice.width();
  if (record.slice.pixels.ndim() != 3 || record.slice.pixels.dim(0) != 3) {
    throw ValidationError("slice must be 3xHxW, got " + record.slice.pixels.shape_str());
  }
  if (record.mask.pixels.ndim() != 2 || record.mask.pixels.dim(0) != h ||
      record.mask.pixels.dim(1) != w) {
    throw ValidationError("mask shape " + record.mask.pixels.shape_str() +
                          " does not match slice " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (record.boundary.pixels.ndim() != 2 || record.boundary.pixels.dim(0) != h ||
      record.boundary.pixels.dim(1) != w) {
    throw ValidationError("boundary shape does not match slice");
  }
  const std::int64_t plane = h * w;
  for (std::int64_t i = 0; i < plane; ++i) {
    const double v = record.slice.pixels[i];
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("slice values must lie in [0,1]");
    if (record.slice.pixels[plane + i] != v || record.slice.pixels[2 * plane + i] != v) {
      throw ValidationError("slice channels must be pixelwise identical");
    }
    const double m = record.mask.pixels[i];
    const double b = record.boundary.pixels[i];
    if (m != 0.0 && m != 1.0) throw ValidationError("mask values must be exactly 0 or 1");
    if (b != 0.0 && b != 1.0) throw ValidationError("boundary values must be exactly 0 or 1");
    if (b == 1.0 && m != 1.0) throw ValidationError("boundary must be a subset of the mask");
  }
}

std::vector<DatasetRecord> load_dataset_dir(const std::string& root) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images)) throw IoError("missing images directory: " + images.string());
  if (!fs::is_directory(masks)) throw IoError("missing masks directory: " + masks.string());

  std::map<std::string, fs::path> stems;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() == ".png") stems[entry.path().stem().string()] = entry.path();
  }
  if (stems.empty()) throw IoError("no PNG images under " + images.string());

  std::vector<DatasetRecord> records;
  records.reserve(stems.size());
  for (const auto& [stem, img_path] : stems) {
    const fs::path mask_path = masks / (stem + ".png");
    if (!fs::exists(mask_path)) throw IoError("missing mask for image: " + mask_path.string());
    DatasetRecord rec;
    rec.slice = load_slice(img_path.string());
    rec.mask = load_mask(mask_path.string());
    if (rec.mask.pixels.dim(0) != rec.slice.height() ||
        rec.mask.pixels.dim(1) != rec.slice.width()) {
      throw ValidationError("mask size does not match image for record '" + stem + "'");
    }
    rec.boundary = derive_boundary(rec.mask);
    rec.id = stem;
    records.push_back(std::move(rec));
  }
  return records;
}

void save_dataset_dir(const std::string& root, const std::vector<DatasetRecord>& records) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  fs::create_directories(images);
  fs::create_directories(masks);
  for (const DatasetRecord& rec : records) {
    const std::int64_t h = rec.slice.height(), w = rec.slice.width();
    GrayImage img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
    GrayImage msk{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
    for (std::int64_t i = 0; i < h * w; ++i) {
      img.pixels[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(std::lround(rec.slice.pixels[i] * 255.0));
      msk.pixels[static_cast<std::size_t>(i)] = rec.mask.pixels[i] != 0.0 ? 255 : 0;
    }
    write_png_gray((images / (rec.id + ".png")).string(), img);
    write_png_gray((masks / (rec.id + ".png")).string(), msk);
  }
}

}  // namespace bcsnet
