#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stablekd/tensor.hpp"

namespace skd {

enum class Split { Train, Val };

/// Labelled samples stored contiguously. `sample_shape` is [D] for flat
/// features or [C×H×W] for images; features are row-major per sample.
struct Dataset {
  Shape sample_shape;
  std::vector<float> features;
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_size() const noexcept { return sample_shape.numel(); }
  /// Samples at `indices` stacked into a [n × sample_shape] tensor.
  template <typename T>
  Tensor<T> gather(const std::vector<std::size_t>& indices) const;
  std::vector<std::uint32_t> gather_labels(const std::vector<std::size_t>& indices) const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Interleaved 2-D spiral arms inside the unit disc, with Gaussian noise.
Dataset gen_spirals(std::size_t classes, std::size_t per_class, double noise_sigma,
                    std::uint64_t seed);

/// The noise-free arm point of class `c` at position `t` in [0, 1].
std::pair<double, double> spiral_point(std::size_t classes, std::size_t c, double t);

/// Single-channel side×side images: a class-specific oriented wave with a
/// phase spread evenly over each class, plus Gaussian pixel noise, clamped to [0, 1].
Dataset gen_tiles(std::size_t classes, std::size_t per_class, std::size_t side, double noise_sigma,
                  std::uint64_t seed);

/// Noise-free tile pixel for class `c` at (y, x) with the given phase.
double tile_pixel(std::size_t classes, std::size_t c, std::size_t side, std::size_t y,
                  std::size_t x, double phase);

/// SKD1 binary format, all little-endian: "SKD1", u32 {N, H, W, C, classes},
/// then N records {u16 label, H·W·C f32 pixels in H,W,C order}. Flat
/// datasets use H = W = 1 and C = feature count.
std::vector<std::uint8_t> encode_skd(const Dataset& dataset);
Dataset decode_skd(const std::vector<std::uint8_t>& bytes);
void save_skd(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_skd(const std::filesystem::path& path);

/// Per-class sample without replacement. For a fixed seed the selection is
/// nested across fractions (0.2 ⊂ 0.4 ⊂ ...). Each class keeps
/// round(fraction · n_c) samples; the result order is reshuffled.
Dataset stratified_subset(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Seeded permutation cut into batches; the last partial batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t epoch_seed);

/// Deterministic stratified split of `dataset` into train and validation.
std::pair<Dataset, Dataset> train_val_split(const Dataset& dataset, double val_fraction,
                                            std::uint64_t seed);

}  // namespace skd
