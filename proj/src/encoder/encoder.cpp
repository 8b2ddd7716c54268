#include "hsa/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hsa/random.hpp"

namespace hsa {

namespace {

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage); }
std::string comp_prefix(int stage) { return "comp" + std::to_string(stage); }

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

template <class T>
struct Initializer {
  ParamStore<T>& store;
  std::uint64_t seed;

  void uniform(const std::string& name, Shape shape, double bound) {
    Rng rng = make_rng(seed, {name_hash(name)});
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = T(bound * (2 * uniform01(rng) - 1));
    store.add(name, std::move(t));
  }
  void conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    uniform(name, {out, in, k, k}, std::sqrt(6.0 / double(in * k * k)));
  }
  void bn(const std::string& prefix, std::size_t c) {
    store.add(prefix + ".gamma", Tensor<T>({c}, T(1)));
    store.add(prefix + ".beta", Tensor<T>({c}, T(0)));
    store.add(prefix + ".running_mean", Tensor<T>({c}, T(0)), false);
    store.add(prefix + ".running_var", Tensor<T>({c}, T(1)), false);
  }
  void linear(const std::string& prefix, std::size_t out, std::size_t in) {
    uniform(prefix + ".w", {out, in}, 1.0 / std::sqrt(double(in)));
    store.add(prefix + ".b", Tensor<T>({out}, T(0)));
  }
};

template <class T>
NodeId conv_bn(Graph<T>& g, NodeId x, const std::string& prefix, std::size_t stride, bool relu) {
  NodeId y = g.conv2d(x, g.parameter(prefix + ".conv.w"), stride);
  y = g.batchnorm2d(y, prefix + ".bn");
  return relu ? g.relu(y) : y;
}

template <class T>
NodeId mlp2(Graph<T>& g, NodeId x, const std::string& prefix) {
  NodeId h = g.relu(g.linear(x, g.parameter(prefix + ".fc1.w"), g.parameter(prefix + ".fc1.b")));
  return g.linear(h, g.parameter(prefix + ".fc2.w"), g.parameter(prefix + ".fc2.b"));
}

}  // namespace

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("encoder config: " + m); };
  if (in_channels == 0 || image_size == 0 || stem_channels == 0 || embed_dim == 0 || blocks_per_stage == 0)
    fail("all dimensions must be positive");
  if (stem_stride != 1 && stem_stride != 2) fail("stem_stride must be 1 or 2");
  if (stage_channels.empty()) fail("at least one stage is required");
  if (stage_downsample.size() != stage_channels.size()) fail("stage_downsample must have one flag per stage");
  for (auto c : stage_channels)
    if (c == 0) fail("stage channel counts must be positive");
  for (int s : companion_stages)
    if (s < 1 || s >= int(num_stages()))
      fail("companion stage " + std::to_string(s) + " outside 1.." + std::to_string(int(num_stages()) - 1));
  std::size_t side = image_size;
  if (stem_stride == 2) side = (side + 1) / 2;
  for (bool d : stage_downsample) side = d ? (side + 1) / 2 : side;
  if (side == 0) fail("image too small for the requested downsampling");
}

std::size_t EncoderConfig::tap_size(int stage) const {
  if (stage < 1 || stage > int(num_stages())) throw std::out_of_range("tap_size: no stage " + std::to_string(stage));
  std::size_t side = stem_stride == 2 ? (image_size + 1) / 2 : image_size;
  for (int l = 1; l <= stage; ++l)
    if (stage_downsample[std::size_t(l - 1)]) side = (side + 1) / 2;
  return side;
}

bool EncoderConfig::has_companion(int stage) const {
  return std::find(companion_stages.begin(), companion_stages.end(), stage) != companion_stages.end();
}

EncoderConfig toy_encoder_config() {
  EncoderConfig c;
  c.image_size = 8;
  c.stem_channels = 3;
  c.stage_channels = {4, 6};
  c.stage_downsample = {false, true};
  c.blocks_per_stage = 1;
  c.embed_dim = 5;
  c.companion_stages = {1};
  return c;
}

template <class T>
ParamStore<T> init_params(const EncoderConfig& cfg, std::uint64_t seed, const std::vector<float>& mean,
                          const std::vector<float>& stdev) {
  cfg.validate();
  const std::size_t C = cfg.in_channels;
  if ((!mean.empty() && mean.size() != C) || (!stdev.empty() && stdev.size() != C))
    throw std::invalid_argument("init_params: channel statistics need " + std::to_string(C) + " entries");
  ParamStore<T> store;
  Initializer<T> init{store, seed};
  Tensor<T> m({C}, T(0)), s({C}, T(1));
  for (std::size_t c = 0; c < mean.size(); ++c) m[c] = T(mean[c]);
  for (std::size_t c = 0; c < stdev.size(); ++c) s[c] = T(std::max(stdev[c], 1e-6f));
  store.add("input.mean", std::move(m), false);
  store.add("input.std", std::move(s), false);

  init.conv("stem.conv.w", cfg.stem_channels, C, 3);
  init.bn("stem.bn", cfg.stem_channels);
  std::size_t in = cfg.stem_channels;
  for (int l = 1; l <= int(cfg.num_stages()); ++l) {
    const std::size_t out = cfg.stage_channels[std::size_t(l - 1)];
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string p = stage_prefix(l) + ".b" + std::to_string(b);
      init.conv(p + ".conv.w", out, b == 0 ? in : out, 3);
      init.bn(p + ".bn", out);
    }
    in = out;
  }
  init.linear("head.fc1", cfg.pooled_dim(), cfg.pooled_dim());
  init.linear("head.fc2", cfg.embed_dim, cfg.pooled_dim());
  for (int l : cfg.companion_stages) {
    const std::size_t c = cfg.stage_channels[std::size_t(l - 1)];
    const std::string p = comp_prefix(l);
    init.conv(p + ".neck1.conv.w", c, c, 1);
    init.bn(p + ".neck1.bn", c);
    init.conv(p + ".neck2.conv.w", c, c, 3);
    init.bn(p + ".neck2.bn", c);
    init.conv(p + ".neck3.conv.w", c, c, 1);
    init.bn(p + ".neck3.bn", c);
    init.linear(p + ".fc1", c, c);
    init.linear(p + ".fc2", cfg.companion_out(), c);
  }
  return store;
}

template <class T>
std::size_t parameter_count(const ParamStore<T>& params) {
  std::size_t n = 0;
  for (const auto& name : params.names())
    if (params.trainable(name)) n += params.get(name).size();
  return n;
}

template <class T>
Tensor<T> standardize(const ParamStore<T>& params, const Tensor<float>& images) {
  const auto& mean = params.get("input.mean");
  const auto& stdev = params.get("input.std");
  if (images.rank() != 4 || images.dim(1) != mean.size())
    throw std::invalid_argument("standardize: expected [N, " + std::to_string(mean.size()) + ", H, W], got " +
                                to_string(images.shape()));
  Tensor<T> out(images.shape());
  const std::size_t C = images.dim(1), plane = images.dim(2) * images.dim(3);
  for (std::size_t n = 0; n < images.dim(0); ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = (T(images[off + i]) - mean[c]) / stdev[c];
    }
  return out;
}

template <class T>
NodeId build_companion_head(Graph<T>& g, const EncoderConfig& cfg, int stage, NodeId feature) {
  if (!cfg.has_companion(stage)) throw std::invalid_argument("stage " + std::to_string(stage) + " has no companion head");
  const std::string p = comp_prefix(stage);
  NodeId h = conv_bn(g, feature, p + ".neck1", 1, true);
  h = conv_bn(g, h, p + ".neck2", 1, true);
  h = conv_bn(g, h, p + ".neck3", 1, false);
  h = g.relu(g.add(h, feature));
  const NodeId z = mlp2(g, g.global_avg_pool(h), p);
  const NodeId q = g.l2_normalize(z);
  g.set_name(q, p + ".embedding");
  return q;
}

template <class T>
EncoderNodes build_encoder(Graph<T>& g, const EncoderConfig& cfg, std::size_t batch, const std::string& input_name,
                           bool with_companions) {
  cfg.validate();
  EncoderNodes nodes;
  nodes.input = g.input(input_name, {batch, cfg.in_channels, cfg.image_size, cfg.image_size});
  NodeId x = conv_bn(g, nodes.input, "stem", cfg.stem_stride, true);
  for (int l = 1; l <= int(cfg.num_stages()); ++l) {
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::size_t stride = b == 0 && cfg.stage_downsample[std::size_t(l - 1)] ? 2 : 1;
      x = conv_bn(g, x, stage_prefix(l) + ".b" + std::to_string(b), stride, true);
    }
    nodes.taps.push_back(x);
  }
  nodes.pooled = g.global_avg_pool(x);
  nodes.embedding = g.l2_normalize(mlp2(g, nodes.pooled, std::string("head")));
  g.set_name(nodes.embedding, "embedding");
  if (with_companions)
    for (int l : cfg.companion_stages)
      nodes.companions[l] = build_companion_head(g, cfg, l, nodes.taps[std::size_t(l - 1)]);
  return nodes;
}

template <class T>
EncoderOutput<T> encode_with_taps(ParamStore<T>& params, const EncoderConfig& cfg, const Tensor<float>& images,
                                  Mode mode) {
  if (images.rank() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size)
    throw std::invalid_argument("encode_with_taps: expected [N, " + std::to_string(cfg.in_channels) + ", " +
                                std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) + "], got " +
                                to_string(images.shape()));
  Graph<T> g(&params, mode);
  const auto nodes = build_encoder(g, cfg, images.dim(0));
  g.forward({{"x", standardize(params, images)}}, {.update_running_stats = false});
  EncoderOutput<T> out;
  for (auto t : nodes.taps) out.taps.push_back(g.value(t));
  out.pooled = g.value(nodes.pooled);
  out.embedding = g.value(nodes.embedding);
  for (const auto& [l, id] : nodes.companions) out.companions[l] = g.value(id);
  return out;
}

template <class T>
CompanionProjection<T> companion_project(ParamStore<T>& params, const EncoderConfig& cfg, int stage,
                                         const Tensor<T>& fmap) {
  if (!cfg.has_companion(stage)) throw std::invalid_argument("stage " + std::to_string(stage) + " has no companion head");
  Graph<T> g(&params, Mode::eval);
  const NodeId f = g.input("feature", fmap.shape());
  const NodeId q = build_companion_head(g, cfg, stage, f);
  g.forward({{"feature", fmap}});
  const auto& z = g.value(g.node(q).inputs[0]);
  CompanionProjection<T> out{g.value(q), std::vector<bool>(z.dim(0))};
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    double s = 0;
    for (T v : z.row(r)) s += double(v) * double(v);
    out.degenerate[r] = std::sqrt(s) <= kNormalizeEps;
  }
  return out;
}

#define HSA_INSTANTIATE(T)                                                                                          \
  template ParamStore<T> init_params<T>(const EncoderConfig&, std::uint64_t, const std::vector<float>&,             \
                                        const std::vector<float>&);                                                 \
  template std::size_t parameter_count<T>(const ParamStore<T>&);                                                    \
  template Tensor<T> standardize<T>(const ParamStore<T>&, const Tensor<float>&);                                    \
  template NodeId build_companion_head<T>(Graph<T>&, const EncoderConfig&, int, NodeId);                            \
  template EncoderNodes build_encoder<T>(Graph<T>&, const EncoderConfig&, std::size_t, const std::string&, bool);   \
  template EncoderOutput<T> encode_with_taps<T>(ParamStore<T>&, const EncoderConfig&, const Tensor<float>&, Mode);  \
  template CompanionProjection<T> companion_project<T>(ParamStore<T>&, const EncoderConfig&, int, const Tensor<T>&);
HSA_INSTANTIATE(float)
HSA_INSTANTIATE(double)
#undef HSA_INSTANTIATE

}  // namespace hsa
