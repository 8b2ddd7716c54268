#include "hsa/miner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hsa/kernels.hpp"
#include "hsa/random.hpp"

namespace hsa {

template <class T>
EmbeddingBank<T> refresh_bank(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds,
                              std::int64_t epoch, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("refresh_bank: chunk must be positive");
  const std::size_t n = ds.size(), d = config.pooled_dim();
  EmbeddingBank<T> bank{Tensor<T>({n, d}), epoch};
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Graph<T> g(&params, Mode::eval);
    const auto nodes = build_encoder(g, config, e - b, "x", false);
    g.forward({{"x", standardize(params, slice_rows(ds.images, b, e))}});
    const auto& pooled = g.value(nodes.pooled);
    for (std::size_t r = 0; r < e - b; ++r) {
      double s = 0;
      for (T v : pooled.row(r)) s += double(v) * double(v);
      const double norm = std::sqrt(s);
      auto dst = bank.rows.row(b + r);
      for (std::size_t j = 0; j < d; ++j) dst[j] = norm > kNormalizeEps ? T(double(pooled.row(r)[j]) / norm) : T(0);
    }
  }
  return bank;
}

template <class T>
NeighborSet knn_neighbors(const EmbeddingBank<T>& bank, std::size_t anchor, std::size_t k) {
  const std::size_t n = bank.size();
  if (anchor >= n) throw std::out_of_range("knn_neighbors: anchor " + std::to_string(anchor) + " outside bank of " + std::to_string(n));
  if (k >= n) throw std::invalid_argument("knn_neighbors: k = " + std::to_string(k) + " must be below bank size " + std::to_string(n));
  const std::size_t d = bank.rows.dim(1);
  std::vector<double> sims(n);
  const auto a = bank.rows.row(anchor);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = bank.rows.row(i);
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(a[j]) * double(r[j]);
    sims[i] = s;
  }
  NeighborSet out{anchor, kernels::top_k(sims, k, anchor), {}};
  for (auto id : out.ids) out.scores.push_back(sims[id]);
  return out;
}

std::size_t sample_positive(const NeighborSet& neighbors, std::uint64_t seed) {
  if (neighbors.ids.empty()) return neighbors.anchor;
  Rng rng(seed);
  const auto j = std::size_t((static_cast<unsigned __int128>(rng()) * neighbors.ids.size()) >> 64);
  return neighbors.ids[j];
}

template <class T>
PositiveMiner<T>::PositiveMiner(std::size_t k, std::size_t refresh_period) : k_(k), period_(refresh_period) {
  if (refresh_period == 0) throw std::invalid_argument("miner: refresh period must be positive");
}

template <class T>
void PositiveMiner<T>::refresh(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& ds,
                               std::int64_t epoch) {
  bank_ = refresh_bank(params, config, ds, epoch);
  rebuild_table();
}

template <class T>
void PositiveMiner<T>::restore(EmbeddingBank<T> bank) {
  bank_ = std::move(bank);
  rebuild_table();
}

template <class T>
void PositiveMiner<T>::rebuild_table() {
  const std::size_t n = bank_.size();
  if (n == 0) {
    ids_.clear();
    scores_.clear();
    return;
  }
  if (k_ >= n && k_ > 0)
    throw std::invalid_argument("miner: k = " + std::to_string(k_) + " must be below dataset size " + std::to_string(n));
  ids_.assign(n * k_, 0);
  scores_.assign(n * k_, 0.0);
  if (k_ > 0) kernels::knn_table<T>(n, bank_.rows.dim(1), bank_.rows.data(), k_, ids_, scores_);
}

template <class T>
NeighborSet PositiveMiner<T>::neighbors(std::size_t anchor) const {
  if (anchor >= bank_.size()) throw std::out_of_range("miner: anchor outside bank");
  NeighborSet out{anchor, {}, {}};
  for (std::size_t j = 0; j < k_; ++j) {
    out.ids.push_back(ids_[anchor * k_ + j]);
    out.scores.push_back(scores_[anchor * k_ + j]);
  }
  return out;
}

template <class T>
std::size_t PositiveMiner<T>::positive(std::size_t anchor, std::uint64_t seed) const {
  if (k_ == 0) return anchor;
  return sample_positive(neighbors(anchor), seed);
}

template EmbeddingBank<float> refresh_bank<float>(ParamStore<float>&, const EncoderConfig&, const data::Dataset&, std::int64_t, std::size_t);
template EmbeddingBank<double> refresh_bank<double>(ParamStore<double>&, const EncoderConfig&, const data::Dataset&, std::int64_t, std::size_t);
template NeighborSet knn_neighbors<float>(const EmbeddingBank<float>&, std::size_t, std::size_t);
template NeighborSet knn_neighbors<double>(const EmbeddingBank<double>&, std::size_t, std::size_t);
template class PositiveMiner<float>;
template class PositiveMiner<double>;

}  // namespace hsa
