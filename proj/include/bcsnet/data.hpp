#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcsnet/tensor.hpp"

namespace bcsnet {

/// Grayscale CT slice replicated across 3 identical channels, values in
/// [0,1]. Network entry points additionally require H and W to be positive
/// multiples of 16; arbitrary sizes are normalized via resize_record.
struct CTSlice {
  Tensor pixels;  // 3×H×W
  std::string source_id;

  std::int64_t height() const { return pixels.dim(1); }
  std::int64_t width() const { return pixels.dim(2); }
};

/// Binary segmentation ground truth, H×W with values exactly 0 or 1.
struct SegMask {
  Tensor pixels;
};

/// Binary boundary labels; always a subset of the companion mask's
/// foreground.
struct BoundaryMask {
  Tensor pixels;
};

struct DatasetRecord {
  CTSlice slice;
  SegMask mask;
  BoundaryMask boundary;
  std::string id;
};

struct DatasetSplit {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  std::uint64_t seed = 0;
};

/// Loads an 8-bit raster as a [0,1] slice; RGB inputs are reduced to luma
/// first, then replicated across the 3 channels.
CTSlice load_slice(const std::string& path);

/// Loads an 8-bit raster as a binary mask: raw value > 127 maps to 1.
SegMask load_mask(const std::string& path);

/// One-pixel-wide inner boundary: mask XOR erosion by the 3×3 cross.
/// Pixels outside the image count as background, so foreground touching
/// the border is boundary.
BoundaryMask derive_boundary(const SegMask& mask);

/// Resizes a record: bilinear for the slice, nearest-neighbor for the
/// mask, boundary re-derived from the resized mask. Target must be a
/// positive multiple of 16 per side. The identity size returns the record
/// unchanged bitwise.
DatasetRecord resize_record(const DatasetRecord& record, std::int64_t out_h, std::int64_t out_w);

/// Deterministic shuffled split; |test| = round-half-up(test_fraction·N).
DatasetSplit split_dataset(std::vector<DatasetRecord> records, double test_fraction,
                           std::uint64_t seed);

/// Synthetic lesion-like dataset: 1–4 anti-aliased bright elliptical blobs
/// on a noisy darker background. Masks are the blob support with a
/// foreground fraction kept inside [0.02, 0.5]. Deterministic per
/// (n, size, seed).
std::vector<DatasetRecord> synth_blobs(std::int64_t n, std::int64_t h, std::int64_t w,
                                       std::uint64_t seed);

/// Validates the shared-shape and binarity invariants of a record.
void validate_record(const DatasetRecord& record);

/// Loads `<root>/images/*.png` with matching `<root>/masks/*.png` stems;
/// boundaries are derived, never read. Records are ordered by stem.
std::vector<DatasetRecord> load_dataset_dir(const std::string& root);

/// Writes records as `<root>/images/<id>.png` and `<root>/masks/<id>.png`.
void save_dataset_dir(const std::string& root, const std::vector<DatasetRecord>& records);

}  // namespace bcsnet
