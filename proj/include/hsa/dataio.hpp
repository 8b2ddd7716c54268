#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hsa/tensor.hpp"

namespace hsa::data {

enum class Split { train, val };

/// Immutable labeled image set. Pixels are in [0, 1], layout [N, C, H, W].
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  int num_classes = 0;
  /// Index of each sample in the dataset it was drawn from (identity for a
  /// freshly loaded or generated set).
  std::vector<std::size_t> source_ids;
  Split split = Split::train;
  /// Per-channel statistics computed once at load; the encoder standardizes
  /// its input with them.
  std::vector<float> channel_mean;
  std::vector<float> channel_std;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::span<const float> image(std::size_t i) const { return images.row(i); }
};

/// Recomputes channel_mean / channel_std from the pixels.
void compute_channel_stats(Dataset& ds);

/// Samples at `indices`, in order. Statistics are inherited from `ds`.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

// -- CIFAR-10 binary format ------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

/// One batch file: records of 1 label byte + 3072 channel-major RGB bytes.
Dataset load_cifar10_file(const std::filesystem::path& file);

/// data_batch_1..5.bin (train) or test_batch.bin (val) from a directory.
/// Missing train batches are skipped; at least one must exist.
Dataset load_cifar10(const std::filesystem::path& dir, Split split = Split::train);

// -- synthetic clustered images --------------------------------------------

struct SyntheticSpec {
  int num_classes = 10;
  int samples_per_class = 500;
  int height = 32;
  int width = 32;
  /// Std of additive per-pixel Gaussian noise.
  double noise = 0.08;
  /// 0: every sample uses its class palette; 1: colors fully random.
  double color_variation = 0.6;
  /// Std of a smooth low-frequency background field.
  double clutter = 0.15;
  /// Scale range of the class motif relative to the image side.
  double min_scale = 0.5;
  double max_scale = 1.0;

  bool operator==(const SyntheticSpec&) const = default;
};

/// Per-sample geometric and color parameters of a synthetic image.
struct SampleGeometry {
  double cx = 0.5, cy = 0.5;  // motif center, fraction of the image
  double scale = 1.0;         // motif size, fraction of the image side
  double phase = 0.0;         // texture phase in [0, 1)
  double frequency = 1.0;     // texture frequency multiplier
  std::array<double, 3> fg{};
  std::array<double, 3> bg{};
  std::array<double, 4> clutter{};  // low-frequency background coefficients
};

/// Deterministic geometry of sample `index` (class = index % num_classes).
SampleGeometry synthetic_geometry(const SyntheticSpec& spec, std::uint64_t seed, std::size_t index);

/// Noise-free rendering of one sample into a [3, H, W] buffer.
void render_synthetic(const SyntheticSpec& spec, int label, const SampleGeometry& geom, std::span<float> out);

/// Balanced class-conditional dataset; bit-identical for equal (spec, seed).
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, Split split = Split::train);

// -- splitting and iteration -----------------------------------------------

/// Stratified per-class split: round(fraction * class_count) labeled samples
/// per class. The unlabeled part keeps its labels for evaluation only.
std::pair<Dataset, Dataset> split_labels(const Dataset& ds, double fraction, std::uint64_t seed);

/// Fisher-Yates permutation of 0..n-1 seeded by (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Shuffled index batches for one epoch; the final short batch is kept.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);

}  // namespace hsa::data
