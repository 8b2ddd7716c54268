#pragma once

#include <cstdint>
#include <vector>

#include "hsa/dataio.hpp"
#include "hsa/encoder.hpp"

namespace hsa {

/// Unit-norm pooled query-encoder features of the whole training set.
template <class T>
struct EmbeddingBank {
  Tensor<T> rows;  // [N, pooled_dim]
  std::int64_t epoch = -1;

  std::size_t size() const { return rows.rank() ? rows.dim(0) : 0; }
};

/// Eval-mode pooled features of every image, l2-normalized in double.
template <class T>
EmbeddingBank<T> refresh_bank(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds,
                              std::int64_t epoch, std::size_t chunk = 256);

struct NeighborSet {
  std::size_t anchor = 0;
  std::vector<std::size_t> ids;  // descending similarity, ties to the smaller id
  std::vector<double> scores;
};

/// Exact top-k cosine neighbors of one anchor, anchor excluded.
template <class T>
NeighborSet knn_neighbors(const EmbeddingBank<T>& bank, std::size_t anchor, std::size_t k);

/// Uniform draw from the neighbors; the anchor itself when there are none.
std::size_t sample_positive(const NeighborSet& neighbors, std::uint64_t seed);

/// Bank plus precomputed neighbor table, rebuilt every `refresh_period`
/// epochs starting at epoch 0.
template <class T>
class PositiveMiner {
 public:
  PositiveMiner(std::size_t k, std::size_t refresh_period);

  bool due(std::int64_t epoch) const { return epoch % std::int64_t(period_) == 0 && bank_.epoch != epoch; }
  void refresh(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds, std::int64_t epoch);
  /// Positive for `anchor`, drawn with `seed`.
  std::size_t positive(std::size_t anchor, std::uint64_t seed) const;
  NeighborSet neighbors(std::size_t anchor) const;
  /// Reinstates a checkpointed bank and recomputes its neighbor table.
  void restore(EmbeddingBank<T> bank);

  std::size_t k() const noexcept { return k_; }
  const EmbeddingBank<T>& bank() const noexcept { return bank_; }

 private:
  void rebuild_table();

  std::size_t k_, period_;
  EmbeddingBank<T> bank_;
  std::vector<std::uint32_t> ids_;
  std::vector<double> scores_;
};

}  // namespace hsa
