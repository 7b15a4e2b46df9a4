#pragma once

#include "cgnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cgnet {

/// One image/label pair. image is [1,3,H,W] with values 0..255; labels is 1xHxW.
struct Sample {
  Tensor<float> image;
  Labels labels;
};

/// Binary P6 with maxval 255, channel-planar tensor [1,3,H,W].
Tensor<float> read_ppm(const std::filesystem::path& path);
/// Values are rounded and clamped to 0..255.
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);

/// Binary P5 with maxval 255; 255 is the ignore label.
Labels read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Labels& labels);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path labels;
};

/// Text manifest: header `classes=K`, then `image<TAB>labels` per line, `#`
/// comments. Relative paths are resolved against the manifest's directory.
struct Manifest {
  int num_classes = 0;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// `class_id category_id` per line; returns class -> category for classes 0..K-1.
std::vector<int> read_category_map(const std::filesystem::path& path, int num_classes);

/// Loads every pair and checks shapes and label range.
std::vector<Sample> load_samples(const Manifest& manifest);

/// Per-channel mean over all pixels of all images (f64 accumulation).
std::array<double, 3> compute_means(const Manifest& manifest);
std::array<double, 3> compute_means(const std::vector<Sample>& samples);

/// Writes `count` synthetic image/label pairs plus manifest.txt into out_dir and
/// returns the manifest path. Background is class 0; 2-5 non-overlapping
/// rectangles and discs of classes 1..K-1 carry a 1-pixel ignore border.
std::filesystem::path gen_synthetic(std::uint64_t seed, int count, int size, int num_classes,
                                    const std::filesystem::path& out_dir);

/// In-memory form of one synthetic sample (used by gen_synthetic).
Sample synthesize_sample(std::uint64_t seed, int index, int size, int num_classes);

}  // namespace cgnet
