#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hsa/graph.hpp"

namespace hsa {

/// Stages are numbered from 1. Stage l holds `blocks_per_stage` conv3x3 +
/// batchnorm + relu blocks; the first block downsamples when requested.
struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::size_t stem_channels = 32;
  std::size_t stem_stride = 1;
  std::vector<std::size_t> stage_channels{32, 64, 128, 256};
  std::vector<bool> stage_downsample{false, true, true, true};
  std::size_t blocks_per_stage = 2;
  std::size_t embed_dim = 128;
  std::vector<int> companion_stages{2, 3};
  /// 0 means embed_dim.
  std::size_t companion_dim = 0;

  void validate() const;
  std::size_t num_stages() const { return stage_channels.size(); }
  std::size_t pooled_dim() const { return stage_channels.back(); }
  std::size_t companion_out() const { return companion_dim ? companion_dim : embed_dim; }
  /// Spatial side of the stage-l tap.
  std::size_t tap_size(int stage) const;
  bool has_companion(int stage) const;

  bool operator==(const EncoderConfig&) const = default;
};

/// Tiny network used by gradient checks and smoke tests.
EncoderConfig toy_encoder_config();

/// Weights, batchnorm running statistics and the input standardization
/// buffers (`input.mean`, `input.std`). Deterministic in (config, seed).
template <class T>
ParamStore<T> init_params(const EncoderConfig& config, std::uint64_t seed,
                          const std::vector<float>& channel_mean = {}, const std::vector<float>& channel_std = {});

/// Number of trainable scalars.
template <class T>
std::size_t parameter_count(const ParamStore<T>& params);

/// Images in [0, 1] -> standardized network input with the store's buffers.
template <class T>
Tensor<T> standardize(const ParamStore<T>& params, const Tensor<float>& images);

struct EncoderNodes {
  NodeId input;
  std::vector<NodeId> taps;  // one per stage
  NodeId pooled;
  NodeId embedding;
  std::map<int, NodeId> companions;  // stage -> unit embedding
};

/// Appends the encoder for a fixed batch to `g`. The input node `input_name`
/// expects standardized images [batch, C, S, S] and takes no gradient.
template <class T>
EncoderNodes build_encoder(Graph<T>& g, const EncoderConfig& config, std::size_t batch,
                           const std::string& input_name = "x", bool with_companions = true);

/// Companion head g^l on a feature-map node: bottleneck (1x1, 3x3, 1x1 with a
/// residual), pooling, two-layer MLP, l2 normalization.
template <class T>
NodeId build_companion_head(Graph<T>& g, const EncoderConfig& config, int stage, NodeId feature);

template <class T>
struct EncoderOutput {
  std::vector<Tensor<T>> taps;
  Tensor<T> pooled;
  Tensor<T> embedding;
  std::map<int, Tensor<T>> companions;
};

/// One-shot forward. Train mode uses batch statistics without touching the
/// running averages.
template <class T>
EncoderOutput<T> encode_with_taps(ParamStore<T>& params, const EncoderConfig& config, const Tensor<float>& images,
                                  Mode mode);

template <class T>
struct CompanionProjection {
  Tensor<T> embedding;            // [N, companion_out]
  std::vector<bool> degenerate;   // pre-normalization norm <= kNormalizeEps
};

/// Eval-mode companion head of `stage` applied to a stage-l feature map.
template <class T>
CompanionProjection<T> companion_project(ParamStore<T>& params, const EncoderConfig& config, int stage,
                                         const Tensor<T>& feature_map);

}  // namespace hsa
