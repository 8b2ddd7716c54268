#include "hsa/contrast.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "hsa/random.hpp"

namespace hsa {

namespace {

constexpr double kUnitTolerance = 1e-5;

}  // namespace

template <class T>
NegativeQueue<T>::NegativeQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), buffer_(capacity * dim) {
  if (dim == 0) throw std::invalid_argument("negative queue: dimension must be positive");
}

template <class T>
void NegativeQueue<T>::enqueue(const Tensor<T>& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_)
    throw std::invalid_argument("enqueue: expected [B, " + std::to_string(dim_) + "] keys, got " + to_string(keys.shape()));
  for (std::size_t r = 0; r < keys.dim(0); ++r) {
    double s = 0;
    for (T v : keys.row(r)) s += double(v) * double(v);
    if (s != 0 && std::abs(std::sqrt(s) - 1) > kUnitTolerance)
      throw std::invalid_argument("enqueue: key row " + std::to_string(r) + " has norm " + std::to_string(std::sqrt(s)));
  }
  if (capacity_ == 0) return;
  const std::size_t b = keys.dim(0);
  const std::size_t skip = b > capacity_ ? b - capacity_ : 0;
  for (std::size_t r = skip; r < b; ++r) {
    std::copy(keys.row(r).begin(), keys.row(r).end(), buffer_.begin() + std::ptrdiff_t(cursor_ * dim_));
    cursor_ = (cursor_ + 1) % capacity_;
  }
  fill_ = std::min(capacity_, fill_ + b);
}

template <class T>
Tensor<T> NegativeQueue<T>::negatives(bool strict) const {
  if (strict && !warm())
    throw std::logic_error("negatives: queue holds " + std::to_string(fill_) + " of " + std::to_string(capacity_) +
                           " keys (strict warmup)");
  Tensor<T> out({fill_, dim_});
  // Oldest entry sits at the cursor once the ring has wrapped, at 0 before.
  const std::size_t start = warm() ? cursor_ : 0;
  for (std::size_t i = 0; i < fill_; ++i) {
    const std::size_t slot = (start + i) % std::max<std::size_t>(capacity_, 1);
    std::copy_n(buffer_.begin() + std::ptrdiff_t(slot * dim_), dim_, out.row(i).begin());
  }
  return out;
}

template <class T>
void NegativeQueue<T>::prefill_random(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor<T> keys({capacity_, dim_});
  for (std::size_t r = 0; r < capacity_; ++r) {
    std::vector<double> v(dim_);
    double s = 0;
    for (auto& x : v) {
      x = gauss(rng);
      s += x * x;
    }
    for (std::size_t j = 0; j < dim_; ++j) keys.row(r)[j] = T(v[j] / std::sqrt(s));
  }
  enqueue(keys);
}

template <class T>
void NegativeQueue<T>::restore(std::vector<T> buffer, std::size_t fill, std::size_t cursor) {
  if (buffer.size() != capacity_ * dim_ || fill > capacity_ || (capacity_ > 0 && cursor >= capacity_))
    throw std::invalid_argument("negative queue: inconsistent checkpoint state");
  buffer_ = std::move(buffer);
  fill_ = fill;
  cursor_ = cursor;
}

template <class T>
MomentumPair<T> make_momentum_pair(const EncoderConfig& config, ParamStore<T> query, double momentum,
                                   std::size_t queue_capacity) {
  if (!(momentum >= 0 && momentum <= 1)) throw std::invalid_argument("momentum must lie in [0, 1]");
  MomentumPair<T> pair{query, query, momentum, {}};
  pair.queues.emplace(kFinalHead, NegativeQueue<T>(queue_capacity, config.embed_dim));
  for (int l : config.companion_stages) pair.queues.emplace(l, NegativeQueue<T>(queue_capacity, config.companion_out()));
  return pair;
}

template <class T>
void momentum_update(ParamStore<T>& key, const ParamStore<T>& query, double m) {
  if (!(m >= 0 && m <= 1)) throw std::invalid_argument("momentum must lie in [0, 1]");
  if (!key.isomorphic(query)) throw std::invalid_argument("momentum_update: key and query parameters are not isomorphic");
  const T mk = T(m), mq = T(1 - m);
  for (const auto& name : query.names()) {
    auto& k = key.get(name);
    const auto& q = query.get(name);
    if (!query.trainable(name)) {
      k = q;
      continue;
    }
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = mk * k[i] + mq * q[i];
  }
}

template <class T>
KeyOutputs<T> encode_keys(ParamStore<T>& key_params, const EncoderConfig& config, const Tensor<float>& views) {
  Graph<T> g(&key_params, Mode::train);
  const auto nodes = build_encoder(g, config, views.dim(0));
  g.forward({{"x", standardize(key_params, views)}}, {.update_running_stats = false});
  KeyOutputs<T> out{g.value(nodes.embedding), {}};
  for (const auto& [l, id] : nodes.companions) out.companions[l] = g.value(id);
  return out;
}

template class NegativeQueue<float>;
template class NegativeQueue<double>;
template MomentumPair<float> make_momentum_pair<float>(const EncoderConfig&, ParamStore<float>, double, std::size_t);
template MomentumPair<double> make_momentum_pair<double>(const EncoderConfig&, ParamStore<double>, double, std::size_t);
template void momentum_update<float>(ParamStore<float>&, const ParamStore<float>&, double);
template void momentum_update<double>(ParamStore<double>&, const ParamStore<double>&, double);
template KeyOutputs<float> encode_keys<float>(ParamStore<float>&, const EncoderConfig&, const Tensor<float>&);
template KeyOutputs<double> encode_keys<double>(ParamStore<double>&, const EncoderConfig&, const Tensor<float>&);

}  // namespace hsa
