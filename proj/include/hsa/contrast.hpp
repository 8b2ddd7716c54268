#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "hsa/encoder.hpp"

namespace hsa {

/// Fixed-capacity FIFO of unit key vectors.
template <class T>
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t fill() const noexcept { return fill_; }
  std::size_t cursor() const noexcept { return cursor_; }
  bool warm() const noexcept { return fill_ == capacity_; }

  /// Appends the rows of keys [B, dim]; the oldest rows are overwritten. Rows
  /// must be unit length or exactly zero (a degenerate embedding).
  void enqueue(const Tensor<T>& keys);
  /// Stored vectors, oldest first: [capacity, dim] once warm. Before warmup
  /// strict mode throws and lenient mode returns the [fill, dim] prefix.
  Tensor<T> negatives(bool strict = false) const;
  /// Fills the queue with random unit vectors.
  void prefill_random(std::uint64_t seed);

  /// Raw state for checkpoints.
  const std::vector<T>& buffer() const noexcept { return buffer_; }
  void restore(std::vector<T> buffer, std::size_t fill, std::size_t cursor);

  bool operator==(const NegativeQueue&) const = default;

 private:
  std::size_t capacity_ = 0, dim_ = 0, fill_ = 0, cursor_ = 0;
  std::vector<T> buffer_;
};

/// Queue key of the final projection head; companion heads use their stage.
inline constexpr int kFinalHead = 0;

template <class T>
struct MomentumPair {
  ParamStore<T> query;
  ParamStore<T> key;
  double momentum = 0.999;
  std::map<int, NegativeQueue<T>> queues;
};

/// Key encoder starts as an exact copy of the query encoder, with one empty
/// queue per loss head.
template <class T>
MomentumPair<T> make_momentum_pair(const EncoderConfig& config, ParamStore<T> query, double momentum,
                                   std::size_t queue_capacity);

/// key <- m key + (1 - m) query for trainable tensors; buffers are copied.
template <class T>
void momentum_update(ParamStore<T>& key, const ParamStore<T>& query, double m);

template <class T>
struct KeyOutputs {
  Tensor<T> embedding;
  std::map<int, Tensor<T>> companions;
};

/// Forward through the key encoder: batch statistics, no running-stat
/// updates, no backward pass.
template <class T>
KeyOutputs<T> encode_keys(ParamStore<T>& key_params, const EncoderConfig& config, const Tensor<float>& views);

}  // namespace hsa
