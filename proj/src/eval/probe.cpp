#include <cmath>
#include <stdexcept>

#include "hsa/eval.hpp"
#include "hsa/optim.hpp"

namespace hsa::eval {

namespace {

struct Standardizer {
  std::vector<double> mean, inv_std;

  explicit Standardizer(const Tensor<double>& x) : mean(x.dim(1), 0.0), inv_std(x.dim(1), 0.0) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x.row(r)[j];
    for (auto& m : mean) m /= double(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) var[j] += (x.row(r)[j] - mean[j]) * (x.row(r)[j] - mean[j]);
    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] / double(n) + 1e-8);
  }

  Tensor<double> operator()(const Tensor<double>& x) const {
    Tensor<double> out(x.shape());
    for (std::size_t r = 0; r < x.dim(0); ++r)
      for (std::size_t j = 0; j < x.dim(1); ++j) out.row(r)[j] = (x.row(r)[j] - mean[j]) * inv_std[j];
    return out;
  }
};

std::vector<int> argmax_rows(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t c = w.dim(0), d = w.dim(1);
  std::vector<int> out(x.dim(0));
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double best = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      double z = b[k];
      for (std::size_t j = 0; j < d; ++j) z += w.row(k)[j] * x.row(r)[j];
      if (z > best) best = z, out[r] = int(k);
    }
  }
  return out;
}

}  // namespace

ProbeResult train_probe(const Tensor<double>& train_x, std::span<const int> train_y, const Tensor<double>& val_x,
                        std::span<const int> val_y, int num_classes, const ProbeConfig& config) {
  if (train_x.rank() != 2 || train_x.dim(0) != train_y.size() || train_y.empty())
    throw std::invalid_argument("probe: need one label per training feature row");
  if (val_x.rank() != 2 || val_x.dim(0) != val_y.size() || val_x.dim(1) != train_x.dim(1))
    throw std::invalid_argument("probe: validation features do not match");
  if (config.batch_size == 0 || !(config.lr >= 0)) throw std::invalid_argument("probe: batch size and lr must be positive");
  const std::size_t d = train_x.dim(1), c = std::size_t(num_classes);
  const Standardizer standardize(train_x);
  const Tensor<double> xs = standardize(train_x);

  ParamStore<double> head;
  head.add("probe.w", Tensor<double>({c, d}));
  head.add("probe.b", Tensor<double>({c}));
  OptimState<double> state;
  const std::size_t per_epoch = (train_y.size() + config.batch_size - 1) / config.batch_size;
  const auto total = std::int64_t(config.epochs * per_epoch);
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : data::batch_iter(train_y.size(), config.batch_size, config.seed, epoch)) {
      Tensor<double> xb({batch.size(), d});
      std::vector<int> yb;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::copy(xs.row(batch[i]).begin(), xs.row(batch[i]).end(), xb.row(i).begin());
        yb.push_back(train_y[batch[i]]);
      }
      Graph<double> g(&head, Mode::train);
      const auto x = g.input("features", {batch.size(), d});
      const auto loss = g.softmax_cross_entropy(g.linear(x, g.parameter("probe.w"), g.parameter("probe.b")), yb);
      g.forward({{"features", xb}});
      const auto grads = g.backward(loss);
      if (g.has_adjoint(x) || grads.count("features")) throw std::logic_error("probe: gradient reached the frozen features");
      sgd_update(head, grads, state, cosine_lr(step++, total, config.lr), config.momentum, config.weight_decay);
    }
  }

  ProbeResult r;
  r.weight = head.get("probe.w");
  r.bias = head.get("probe.b");
  r.train_accuracy = accuracy(argmax_rows(xs, r.weight, r.bias), train_y);
  r.val_predictions = argmax_rows(standardize(val_x), r.weight, r.bias);
  r.val_accuracy = accuracy(r.val_predictions, val_y);
  return r;
}

template <class T>
ProbeResult linear_probe(ParamStore<T>& params, const EncoderConfig& config, const data::Dataset& train,
                         const data::Dataset& val, const ProbeConfig& probe) {
  const ParamStore<T> frozen = params;
  auto r = train_probe(extract_features(params, config, train, probe.stage), train.labels,
                       extract_features(params, config, val, probe.stage), val.labels, train.num_classes, probe);
  if (!(params == frozen)) throw std::logic_error("linear_probe: encoder parameters changed");
  return r;
}

template ProbeResult linear_probe<float>(ParamStore<float>&, const EncoderConfig&, const data::Dataset&,
                                         const data::Dataset&, const ProbeConfig&);
template ProbeResult linear_probe<double>(ParamStore<double>&, const EncoderConfig&, const data::Dataset&,
                                          const data::Dataset&, const ProbeConfig&);

}  // namespace hsa::eval
