#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hsa/augment.hpp"
#include "hsa/eval.hpp"
#include "hsa/optim.hpp"
#include "hsa/random.hpp"

namespace hsa::eval {

namespace {

bool is_head(const std::string& name) { return name.rfind("cls.", 0) == 0; }

template <class T>
NodeId build_logits(Graph<T>& g, const EncoderConfig& config, std::size_t batch) {
  const auto nodes = build_encoder(g, config, batch, "x", false);
  return g.linear(g.l2_normalize(nodes.pooled), g.parameter("cls.w"), g.parameter("cls.b"));
}

}  // namespace

template <class T>
Classifier<T> make_classifier(const ParamStore<T>& pretrained, const EncoderConfig& config, int num_classes) {
  if (num_classes < 2) throw std::invalid_argument("classifier: need at least 2 classes");
  Classifier<T> m{pretrained, config, num_classes};
  m.params.add("cls.w", Tensor<T>({std::size_t(num_classes), config.pooled_dim()}));
  m.params.add("cls.b", Tensor<T>({std::size_t(num_classes)}));
  return m;
}

template <class T>
Tensor<double> predict_proba(Classifier<T>& model, const data::Dataset& ds, std::size_t chunk) {
  const std::size_t n = ds.size(), c = std::size_t(model.num_classes);
  Tensor<double> out({n, c});
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Graph<T> g(&model.params, Mode::eval);
    const auto logits = build_logits(g, model.config, e - b);
    g.forward({{"x", standardize(model.params, slice_rows(ds.images, b, e))}});
    const auto& z = g.value(logits);
    for (std::size_t r = 0; r < e - b; ++r) {
      const auto zr = z.row(r);
      const double mx = double(*std::max_element(zr.begin(), zr.end()));
      double s = 0;
      auto dst = out.row(b + r);
      for (std::size_t k = 0; k < c; ++k) s += dst[k] = std::exp(double(zr[k]) - mx);
      for (auto& v : dst) v /= s;
    }
  }
  return out;
}

template <class T>
std::vector<int> predict(Classifier<T>& model, const data::Dataset& ds) {
  const auto p = predict_proba(model, ds);
  std::vector<int> out(ds.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = p.row(r);
    out[r] = int(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <class T>
void finetune(Classifier<T>& model, const data::Dataset& labeled, const FinetuneConfig& config) {
  if (labeled.size() == 0) throw std::invalid_argument("finetune: empty labeled set");
  if (config.batch_size == 0) throw std::invalid_argument("finetune: batch size must be positive");
  aug::ViewParams view;  // crop and flip only
  view.jitter_prob = 0;
  view.grayscale_prob = 0;
  const std::uint64_t aug_stream = derive_seed(config.seed, {1}), data_stream = derive_seed(config.seed, {2});
  const std::size_t per_epoch = (labeled.size() + config.batch_size - 1) / config.batch_size;
  const auto total = std::int64_t(config.epochs * per_epoch);
  OptimState<T> state;
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::uint64_t s = 0;
    for (const auto& batch : data::batch_iter(labeled.size(), config.batch_size, data_stream, epoch)) {
      std::vector<int> yb;
      for (auto i : batch) yb.push_back(labeled.labels[i]);
      Graph<T> g(&model.params, Mode::train);
      const auto loss = g.softmax_cross_entropy(build_logits(g, model.config, batch.size()), yb);
      g.forward({{"x", standardize(model.params, aug::augment_batch(labeled, batch, view, aug_stream, epoch, s++, 0))}});
      auto grads = g.backward(loss);
      if (!std::isfinite(double(g.value(loss)[0]))) throw std::runtime_error("finetune: non-finite loss");
      Gradients<T> head, backbone;
      for (auto& [name, grad] : grads) (is_head(name) ? head : backbone).emplace(name, std::move(grad));
      const double scale = config.decay_every ? step_lr(std::int64_t(epoch), std::int64_t(config.decay_every), 0.1, 1.0)
                                              : cosine_lr(step, total, 1.0);
      ++step;
      sgd_update(model.params, backbone, state, config.backbone_lr * scale, config.momentum, config.weight_decay);
      sgd_update(model.params, head, state, config.head_lr * scale, config.momentum, config.weight_decay);
    }
  }
}

double entropy(std::span<const double> p, EntropyBase base) {
  double sum = 0, h = 0;
  for (double v : p) {
    if (!(v >= 0)) throw std::invalid_argument("entropy: negative or NaN probability");
    sum += v;
    if (v > 0) h -= v * std::log(v);
  }
  if (std::abs(sum - 1.0) > 1e-4) throw std::invalid_argument("entropy: probabilities sum to " + std::to_string(sum));
  return base == EntropyBase::two ? h / std::numbers::ln2 : h;
}

PseudoLabelSet mine_pseudo_labels(const Tensor<double>& probs, double threshold, EntropyBase base) {
  if (probs.rank() != 2) throw std::invalid_argument("mine_pseudo_labels: expected [N, C] probabilities");
  PseudoLabelSet out;
  out.threshold = threshold;
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    const auto row = probs.row(r);
    const double h = entropy(row, base);
    if (h > threshold) continue;
    out.ids.push_back(r);
    out.labels.push_back(int(std::max_element(row.begin(), row.end()) - row.begin()));
    out.entropies.push_back(h);
  }
  return out;
}

data::Dataset merge_pseudo_labels(const data::Dataset& labeled, const data::Dataset& unlabeled,
                                  const PseudoLabelSet& pseudo) {
  data::Dataset extra = data::subset(unlabeled, pseudo.ids);
  extra.labels = pseudo.labels;
  data::Dataset out = labeled;
  const Tensor<float>* parts[] = {&labeled.images, &extra.images};
  out.images = concat_rows<float>(parts);
  out.labels.insert(out.labels.end(), extra.labels.begin(), extra.labels.end());
  out.source_ids.insert(out.source_ids.end(), extra.source_ids.begin(), extra.source_ids.end());
  return out;
}

#define HSA_INSTANTIATE(T)                                                                                       \
  template Classifier<T> make_classifier<T>(const ParamStore<T>&, const EncoderConfig&, int);                    \
  template Tensor<double> predict_proba<T>(Classifier<T>&, const data::Dataset&, std::size_t);                   \
  template std::vector<int> predict<T>(Classifier<T>&, const data::Dataset&);                                    \
  template void finetune<T>(Classifier<T>&, const data::Dataset&, const FinetuneConfig&);
HSA_INSTANTIATE(float)
HSA_INSTANTIATE(double)
#undef HSA_INSTANTIATE

}  // namespace hsa::eval
