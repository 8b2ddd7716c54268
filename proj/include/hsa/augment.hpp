#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hsa/dataio.hpp"
#include "hsa/tensor.hpp"

namespace hsa::aug {

/// Images here are single samples of shape [C, H, W] with values in [0, 1].
using Image = Tensor<float>;

struct ViewParams {
  double min_scale = 0.2;
  double max_scale = 1.0;
  double min_aspect = 3.0 / 4.0;
  double max_aspect = 4.0 / 3.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double grayscale_prob = 0.2;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  bool operator==(const ViewParams&) const = default;
};

/// Crop-free, flip-free, color-free parameters.
ViewParams identity_view();

/// Random resized crop, flip, color jitter, grayscale. Pure in (image, params, seed).
Image augment_view(const Image& image, const ViewParams& params, std::uint64_t seed);

Image hflip(const Image& image);

/// Views of `ids` stacked into [B, C, H, W]; sample i uses
/// derive_seed(stream, {epoch, step, tags[i], slot}) with tags = ids when empty.
Tensor<float> augment_batch(const data::Dataset& ds, std::span<const std::size_t> ids, const ViewParams& params,
                            std::uint64_t stream, std::uint64_t epoch, std::uint64_t step, std::uint64_t slot,
                            std::span<const std::size_t> tags = {});

/// Beta(alpha, alpha) through a ratio of gamma draws.
double sample_lambda(double alpha, std::uint64_t seed);

struct CutMixMask {
  std::size_t height = 0, width = 0;
  /// Row-major H x W; 1 keeps the anchor pixel, 0 takes the positive.
  std::vector<std::uint8_t> keep;
  double lambda_adjusted = 1.0;
};

/// Box of round(H sqrt(1-lambda)) x round(W sqrt(1-lambda)) centered on a
/// uniform pixel and clipped to the image. A box as long as an axis covers
/// that whole axis, so lambda = 0 cuts the full image.
CutMixMask make_cutmix_mask(std::size_t height, std::size_t width, double lambda, std::uint64_t seed);

/// Box placement used by make_cutmix_mask, exposed for tests.
CutMixMask cutmix_box(std::size_t height, std::size_t width, double lambda, std::size_t center_y, std::size_t center_x);

struct MixResult {
  Image mixed;
  CutMixMask mask;  // empty for mixup
  double lambda_adjusted = 1.0;
  std::size_t anchor_id = 0, positive_id = 0;
};

MixResult cutmix(const Image& x_a, const Image& x_p, const CutMixMask& mask);
MixResult mixup(const Image& x_a, const Image& x_p, double lambda);

}  // namespace hsa::aug
