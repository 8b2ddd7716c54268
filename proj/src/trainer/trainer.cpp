#include "hsa/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "hsa/augment.hpp"
#include "hsa/random.hpp"

namespace hsa {

Streams Streams::from_seed(std::uint64_t seed) {
  return {derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}), derive_seed(seed, {4}),
          derive_seed(seed, {5})};
}

std::shared_ptr<const data::Dataset> load_train_set(const TrainConfig& c) {
  if (c.data.source == "cifar10") {
    std::string dir = c.data.cifar_dir;
    if (dir.empty())
      if (const char* env = std::getenv("HSA_DATA_DIR")) dir = env;
    if (dir.empty()) throw std::runtime_error("cifar10 source needs data.cifar_dir or HSA_DATA_DIR");
    return std::make_shared<const data::Dataset>(data::load_cifar10(dir, data::Split::train));
  }
  return std::make_shared<const data::Dataset>(data::generate_synthetic(c.data.synthetic, c.data.seed, data::Split::train));
}

std::shared_ptr<const data::Dataset> load_val_set(const TrainConfig& c) {
  if (c.data.source == "cifar10") {
    std::string dir = c.data.cifar_dir;
    if (dir.empty())
      if (const char* env = std::getenv("HSA_DATA_DIR")) dir = env;
    return std::make_shared<const data::Dataset>(data::load_cifar10(dir, data::Split::val));
  }
  auto spec = c.data.synthetic;
  spec.samples_per_class = c.data.val_samples_per_class;
  return std::make_shared<const data::Dataset>(data::generate_synthetic(spec, c.data.seed, data::Split::val));
}

template <class T>
TrainingGraphNodes build_training_graph(Graph<T>& g, const TrainConfig& config, const EncoderConfig& encoder,
                                        std::size_t batch, std::size_t num_negatives) {
  const LossTerms terms = config.loss_terms();
  TrainingGraphNodes out;
  out.views = 1 + std::size_t(terms.positive) + std::size_t(terms.mixed);
  out.encoder = build_encoder(g, encoder, out.views * batch, "x", true);

  auto head = [&](int id, NodeId emb, const LossWeights& w) {
    HeadQueries q{g.slice_rows(emb, 0, batch), std::nullopt, std::nullopt};
    std::size_t view = 1;
    if (terms.positive) q.q_p = g.slice_rows(emb, view * batch, (view + 1) * batch), ++view;
    if (terms.mixed) q.q_mix = g.slice_rows(emb, view * batch, (view + 1) * batch);
    return build_head_loss(g, "h" + std::to_string(id), q, num_negatives, config.contrast.tau, w, terms);
  };
  out.heads.emplace(kFinalHead, head(kFinalHead, out.encoder.embedding, config.weights));
  NodeId total = out.heads.at(kFinalHead).total;
  for (const auto& [l, emb] : out.encoder.companions) {
    out.heads.emplace(l, head(l, emb, LossWeights{}));
    total = g.add(total, out.heads.at(l).total);
  }
  out.total = total;
  g.set_name(total, "loss");
  return out;
}

template <class T>
struct Trainer<T>::QueryGraph {
  Graph<T> query;
  TrainingGraphNodes nodes;
  Graph<T> key;
  EncoderNodes key_nodes;
};

template <class T>
Trainer<T>::Trainer(TrainConfig config, std::shared_ptr<const data::Dataset> train)
    : config_(std::move(config)),
      train_(std::move(train)),
      streams_(Streams::from_seed(config_.seed)),
      miner_(config_.miner.k, config_.miner.refresh_period) {
  validate(config_);
  if (!train_ || train_->size() == 0) throw std::invalid_argument("trainer: empty training set");
  const auto& e = config_.encoder;
  if (train_->channels() != e.in_channels || train_->height() != e.image_size || train_->width() != e.image_size)
    throw std::invalid_argument("trainer: dataset images do not match the encoder input size");
  train_encoder_ = e;
  if (!config_.effective_variant().stages_on) train_encoder_.companion_stages.clear();
  auto query = init_params<T>(e, streams_.init, train_->channel_mean, train_->channel_std);
  pair_ = make_momentum_pair(train_encoder_, std::move(query), config_.contrast.momentum, config_.contrast.queue_capacity);
  if (config_.contrast.queue_prefill)
    for (auto& [h, q] : pair_.queues) q.prefill_random(derive_seed(streams_.init, {0x51ULL, std::uint64_t(h + 1)}));
}

template <class T>
std::uint64_t Trainer<T>::total_steps() const noexcept {
  const std::size_t b = config_.optim.batch_size;
  return std::uint64_t(config_.optim.epochs) * ((train_->size() + b - 1) / b);
}

template <class T>
typename Trainer<T>::QueryGraph& Trainer<T>::query_graph(std::size_t batch, std::size_t negatives) {
  const auto key = std::make_pair(batch, negatives);
  if (auto it = graphs_.find(key); it != graphs_.end()) return *it->second;
  std::erase_if(graphs_, [&](const auto& kv) { return kv.first.second != negatives; });
  auto qg = std::make_shared<QueryGraph>(QueryGraph{Graph<T>(&pair_.query, Mode::train), {}, Graph<T>(&pair_.key, Mode::train), {}});
  qg->nodes = build_training_graph(qg->query, config_, train_encoder_, batch, negatives);
  const auto terms = config_.loss_terms();
  const std::size_t key_views = terms.positive || terms.mixed ? 2 : 1;
  qg->key_nodes = build_encoder(qg->key, train_encoder_, key_views * batch, "x", true);
  graphs_[key] = qg;
  return *qg;
}

template <class T>
StepResult Trainer<T>::train_step(std::span<const std::size_t> anchors, StepTrace<T>* trace) {
  const auto& ds = *train_;
  const std::size_t b = anchors.size();
  if (b == 0) throw std::invalid_argument("train_step: empty batch");
  const LossTerms terms = config_.loss_terms();
  const bool pair = terms.positive || terms.mixed;
  const auto e = std::uint64_t(epoch_), s = step_;

  if (config_.mines_positives() && miner_.due(epoch_)) miner_.refresh(pair_.query, train_encoder_, ds, epoch_);
  std::vector<std::size_t> positives(anchors.begin(), anchors.end());
  if (config_.mines_positives())
    for (std::size_t i = 0; i < b; ++i) positives[i] = miner_.positive(anchors[i], derive_seed(streams_.mining, {e, s, anchors[i]}));

  const auto& view = config_.augment;
  const Tensor<float> xa = aug::augment_batch(ds, anchors, view, streams_.augment, e, s, 0);
  std::vector<const Tensor<float>*> query_parts{&xa};
  Tensor<float> xp, xmix;
  std::vector<double> lambda(b, 1.0);
  if (pair) xp = aug::augment_batch(ds, positives, view, streams_.augment, e, s, 1, anchors);
  if (terms.positive) query_parts.push_back(&xp);
  if (terms.mixed) {
    xmix = Tensor<float>(xa.shape());
    const Shape one{xa.dim(1), xa.dim(2), xa.dim(3)};
    for (std::size_t i = 0; i < b; ++i) {
      const aug::Image ia(one, std::vector<float>(xa.row(i).begin(), xa.row(i).end()));
      const aug::Image ip(one, std::vector<float>(xp.row(i).begin(), xp.row(i).end()));
      const double lam = aug::sample_lambda(config_.mix.alpha, derive_seed(streams_.mix, {e, s, anchors[i], 0}));
      const auto mixed = config_.mix.kind == MixKind::cutmix
                             ? aug::cutmix(ia, ip, aug::make_cutmix_mask(one[1], one[2], lam, derive_seed(streams_.mix, {e, s, anchors[i], 1})))
                             : aug::mixup(ia, ip, lam);
      lambda[i] = mixed.lambda_adjusted;
      std::copy(mixed.mixed.data().begin(), mixed.mixed.data().end(), xmix.row(i).begin());
    }
    query_parts.push_back(&xmix);
  }

  // Keys: independently augmented views through the key encoder.
  const Tensor<float> ka = aug::augment_batch(ds, anchors, view, streams_.augment, e, s, 2);
  std::vector<const Tensor<float>*> key_parts{&ka};
  Tensor<float> kp;
  if (pair) {
    kp = aug::augment_batch(ds, positives, view, streams_.augment, e, s, 3, anchors);
    key_parts.push_back(&kp);
  }

  StepResult result;
  const bool strict = config_.contrast.queue_strict;
  const auto& first_queue = pair_.queues.at(kFinalHead);
  const std::size_t k_neg = first_queue.fill();
  auto& qg = query_graph(b, k_neg);

  qg.key.forward({{"x", standardize(pair_.key, concat_rows<float>(key_parts))}}, {.update_running_stats = false});
  auto key_rows = [&](NodeId id, std::size_t v) { return slice_rows(qg.key.value(id), v * b, (v + 1) * b); };
  std::map<int, NodeId> key_heads{{kFinalHead, qg.key_nodes.embedding}};
  for (const auto& [l, id] : qg.key_nodes.companions) key_heads[l] = id;

  if (strict && !first_queue.warm()) {
    for (auto& [h, q] : pair_.queues) q.enqueue(key_rows(key_heads.at(h), 0));
    result.warmup = true;
    ++step_;
    return result;
  }

  Bindings<T> bind{{"x", standardize(pair_.query, concat_rows<float>(query_parts))}};
  Tensor<T> lam_t({b});
  for (std::size_t i = 0; i < b; ++i) lam_t[i] = T(lambda[i]);
  for (const auto& [h, nodes] : qg.nodes.heads) {
    const std::string p = "h" + std::to_string(h);
    bind[p + ".k_a"] = key_rows(key_heads.at(h), 0);
    if (pair) bind[p + ".k_p"] = key_rows(key_heads.at(h), 1);
    bind[p + ".neg"] = pair_.queues.at(h).negatives(strict);
    if (terms.mixed) bind[p + ".lambda"] = lam_t;
  }
  qg.query.forward(bind);

  const auto& heads = qg.nodes.heads;
  auto scalar = [&](NodeId id) { return double(qg.query.value(id)[0]); };
  result.total = scalar(qg.nodes.total);
  const auto& main = heads.at(kFinalHead);
  result.main = scalar(main.total);
  result.main_terms = {scalar(main.anchor_term), main.positive_term ? scalar(*main.positive_term) : 0.0,
                       main.mixed_term ? scalar(*main.mixed_term) : 0.0};
  for (const auto& [h, nodes] : heads)
    if (h != kFinalHead) result.stages[h] = scalar(nodes.total);
  result.negatives = k_neg;
  if (!std::isfinite(result.total))
    throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch_) + " step " + std::to_string(step_));
  if (trace)
    *trace = {slice_rows(qg.query.value(qg.nodes.encoder.embedding), 0, b), bind.at("h0.k_a"),
              pair ? bind.at("h0.k_p") : bind.at("h0.k_a"), bind.at("h0.neg")};

  Gradients<T> grads = qg.query.backward(qg.nodes.total);
  for (auto it = grads.begin(); it != grads.end();) {
    const auto id = qg.query.find(it->first);
    it = id && qg.query.has_adjoint(*id) ? std::next(it) : grads.erase(it);
  }
  for (const auto& [h, nodes] : heads)
    for (auto id : {std::optional<NodeId>(nodes.k_a), nodes.k_p, std::optional<NodeId>(nodes.neg)})
      if (id && qg.query.has_adjoint(*id)) ++result.key_adjoints;
  result.key_adjoints += qg.key.adjoint_nodes().size();

  result.lr = cosine_lr(std::int64_t(std::min(step_, total_steps())), std::int64_t(std::max<std::uint64_t>(total_steps(), 1)),
                        config_.optim.base_lr);
  sgd_update(pair_.query, grads, optim_, result.lr, config_.optim.momentum, config_.optim.weight_decay);
  momentum_update(pair_.key, pair_.query, pair_.momentum);
  for (auto& [h, q] : pair_.queues) q.enqueue(key_rows(key_heads.at(h), 0));
  ++step_;
  return result;
}

template <class T>
EpochResult Trainer<T>::train_epoch(MetricsLog* log) {
  EpochResult r;
  r.epoch = epoch_;
  double sum = 0;
  for (const auto& batch : data::batch_iter(train_->size(), config_.optim.batch_size, streams_.data, std::uint64_t(epoch_))) {
    const StepResult s = train_step(batch);
    sum += s.total;
    ++r.steps;
    if (log) {
      std::map<std::string, double> m{{"loss.total", s.total},       {"loss.main", s.main},
                                      {"loss.main.anchor", s.main_terms[0]}, {"loss.main.positive", s.main_terms[1]},
                                      {"loss.main.mixed", s.main_terms[2]}, {"lr", s.lr},
                                      {"negatives", double(s.negatives)}};
      for (const auto& [l, v] : s.stages) m["loss.stage" + std::to_string(l)] = v;
      log->write("step", epoch_, std::int64_t(step_ - 1), m);
    }
  }
  r.refreshed = config_.mines_positives() && bank_epoch() == epoch_;
  r.mean_loss = r.steps ? sum / double(r.steps) : 0.0;
  if (log) {
    log->write("epoch", epoch_, std::int64_t(step_), {{"loss.mean", r.mean_loss}, {"bank_refreshed", r.refreshed ? 1.0 : 0.0}});
    log->flush();
  }
  ++epoch_;
  return r;
}

template <class T>
void Trainer<T>::fit(MetricsLog* log, const std::optional<std::filesystem::path>& checkpoint) {
  while (std::size_t(epoch_) < config_.optim.epochs) {
    train_epoch(log);
    if (checkpoint && config_.checkpoint_every && std::size_t(epoch_) % config_.checkpoint_every == 0) save_checkpoint(*checkpoint);
  }
  if (checkpoint) save_checkpoint(*checkpoint);
}

namespace {

constexpr char kMagic[8] = {'H', 'S', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class V>
  void pod(V v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& v) { pod<std::uint64_t>(v.size()); out_.write(v.data(), std::streamsize(v.size())); }
  template <class T>
  void vec(std::span<const T> v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
  }
  template <class T>
  void tensor(const Tensor<T>& t) {
    pod<std::uint64_t>(t.rank());
    for (auto d : t.shape()) pod<std::uint64_t>(d);
    vec(t.data());
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <class V>
  V pod() {
    V v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::uint64_t count() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t(1) << 34)) fail("implausible length " + std::to_string(n));
    return n;
  }
  std::string str() {
    std::string v(count(), '\0');
    in_.read(v.data(), std::streamsize(v.size()));
    check();
    return v;
  }
  template <class T>
  std::vector<T> vec() {
    std::vector<T> v(count());
    in_.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
    check();
    return v;
  }
  template <class T>
  Tensor<T> tensor() {
    Shape shape(count());
    for (auto& d : shape) d = count();
    auto data = vec<T>();
    if (data.size() != numel(shape)) fail("tensor payload does not match its shape");
    return Tensor<T>(std::move(shape), std::move(data));
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint " + path_ + ": " + what);
  }

 private:
  void check() const {
    if (!in_) fail("truncated");
  }
  std::ifstream& in_;
  std::string path_;
};

template <class T>
void write_store(Writer& w, const ParamStore<T>& store) {
  w.pod<std::uint64_t>(store.size());
  for (const auto& name : store.names()) {
    w.str(name);
    w.pod<std::uint8_t>(store.trainable(name));
    w.tensor(store.get(name));
  }
}

template <class T>
void read_store(Reader& r, ParamStore<T>& store) {
  const auto n = r.count();
  if (n != store.size()) r.fail("parameter count " + std::to_string(n) + " != " + std::to_string(store.size()));
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = r.str();
    const bool trainable = r.pod<std::uint8_t>() != 0;
    auto t = r.tensor<T>();
    if (!store.contains(name) || store.trainable(name) != trainable) r.fail("unexpected parameter " + name);
    auto& dst = store.get(name);
    if (dst.shape() != t.shape()) r.fail("shape mismatch for " + name);
    dst = std::move(t);
  }
}

}  // namespace

template <class T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.pod(kVersion);
    w.pod<std::uint64_t>(config_hash(config_));
    w.pod<std::uint8_t>(sizeof(T));
    w.pod<std::int64_t>(epoch_);
    w.pod<std::uint64_t>(step_);
    write_store(w, pair_.query);
    write_store(w, pair_.key);
    w.pod<std::uint64_t>(optim_.step);
    w.pod<std::uint64_t>(optim_.velocity.size());
    for (const auto& [name, v] : optim_.velocity) {
      w.str(name);
      w.tensor(v);
    }
    w.pod<std::uint64_t>(pair_.queues.size());
    for (const auto& [h, q] : pair_.queues) {
      w.pod<std::int32_t>(h);
      w.pod<std::uint64_t>(q.capacity());
      w.pod<std::uint64_t>(q.dim());
      w.pod<std::uint64_t>(q.fill());
      w.pod<std::uint64_t>(q.cursor());
      w.vec(std::span<const T>(q.buffer()));
    }
    const auto& bank = miner_.bank();
    w.pod<std::int64_t>(bank.epoch);
    w.tensor(bank.rows);
    if (!out.flush()) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
void Trainer<T>::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) r.fail("bad magic");
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
  if (r.pod<std::uint64_t>() != config_hash(config_)) r.fail("written under a different configuration");
  if (r.pod<std::uint8_t>() != sizeof(T)) r.fail("written at a different precision");
  const auto epoch = r.pod<std::int64_t>();
  const auto step = r.pod<std::uint64_t>();
  auto pair = pair_;
  read_store(r, pair.query);
  read_store(r, pair.key);
  OptimState<T> optim;
  optim.step = r.pod<std::uint64_t>();
  for (auto n = r.count(); n > 0; --n) {
    auto name = r.str();
    if (!pair.query.contains(name)) r.fail("velocity for unknown parameter " + name);
    optim.velocity[name] = r.tensor<T>();
  }
  const auto heads = r.count();
  if (heads != pair.queues.size()) r.fail("queue count mismatch");
  for (std::uint64_t i = 0; i < heads; ++i) {
    const int h = r.pod<std::int32_t>();
    const auto cap = r.pod<std::uint64_t>(), dim = r.pod<std::uint64_t>();
    const auto fill = r.pod<std::uint64_t>(), cursor = r.pod<std::uint64_t>();
    auto buf = r.vec<T>();
    auto it = pair.queues.find(h);
    if (it == pair.queues.end() || it->second.capacity() != cap || it->second.dim() != dim)
      r.fail("queue layout mismatch for head " + std::to_string(h));
    it->second.restore(std::move(buf), fill, cursor);
  }
  EmbeddingBank<T> bank;
  bank.epoch = r.pod<std::int64_t>();
  bank.rows = r.tensor<T>();
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");

  pair_ = std::move(pair);
  optim_ = std::move(optim);
  miner_.restore(std::move(bank));
  epoch_ = epoch;
  step_ = step;
  graphs_.clear();
}

template class Trainer<float>;
template class Trainer<double>;
template TrainingGraphNodes build_training_graph<float>(Graph<float>&, const TrainConfig&, const EncoderConfig&, std::size_t, std::size_t);
template TrainingGraphNodes build_training_graph<double>(Graph<double>&, const TrainConfig&, const EncoderConfig&, std::size_t, std::size_t);

}  // namespace hsa
