#include "hsa/gradcheck_suite.hpp"

#include <chrono>
#include <random>

#include "hsa/gradcheck.hpp"
#include "hsa/random.hpp"
#include "hsa/trainer.hpp"

namespace hsa {

namespace {

Tensor<double> uniform(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

Tensor<double> unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss;
  Tensor<double> t({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (auto& v : t.row(r)) {
      const double x = gauss(rng);
      v = x;
      s += x * x;
    }
    for (auto& v : t.row(r)) v /= std::sqrt(s);
  }
  return t;
}

ParamStore<double> bn_store(std::size_t c, std::uint64_t seed) {
  ParamStore<double> s;
  s.add("bn.gamma", uniform({c}, seed, 0.5, 1.5));
  s.add("bn.beta", uniform({c}, seed + 1));
  s.add("bn.running_mean", uniform({c}, seed + 2), false);
  s.add("bn.running_var", uniform({c}, seed + 3, 0.5, 1.5), false);
  return s;
}

struct Recorder {
  GradCheckSuite& suite;
  double epsilon;

  void operator()(const std::string& name, Graph<double>& g, NodeId loss) {
    const auto r = finite_diff_check(g, loss, epsilon);
    for (std::size_t i = 0; i < g.size(); ++i) suite.covered.insert(g.node(NodeId{static_cast<std::uint32_t>(i)}).kind);
    suite.cases.push_back({name, r.worst, r.checked, r.excluded});
    suite.worst = std::max(suite.worst, r.worst);
  }
};

}  // namespace

std::vector<OpKind> GradCheckSuite::missing() const {
  std::vector<OpKind> out;
  for (int k = 0; k <= int(OpKind::slice_rows); ++k)
    if (!covered.count(OpKind(k))) out.push_back(OpKind(k));
  return out;
}

TrainConfig gradcheck_toy_config() {
  TrainConfig c;
  c.data.synthetic.height = c.data.synthetic.width = 8;
  c.encoder = toy_encoder_config();
  c.contrast.queue_capacity = 16;
  return c;
}

GradCheckSuite run_gradcheck_suite(const TrainConfig& config, std::size_t negatives, double epsilon) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckSuite suite;
  Recorder check{suite, epsilon};

  for (std::size_t k : {1u, 3u})
    for (std::size_t stride : {1u, 2u}) {
      ParamStore<double> s;
      s.add("w", uniform({3, 2, k, k}, 5));
      Graph<double> g(&s);
      const auto x = g.input("x", {2, 2, 5, 5}, true);
      const auto y = g.conv2d(x, g.parameter("w"), stride);
      const auto c = g.input("c", g.node(y).shape);
      const auto l = g.sum(g.mul(y, c));
      g.bind({{"x", uniform({2, 2, 5, 5}, 6)}, {"c", uniform(g.node(y).shape, 7)}});
      check("conv2d k" + std::to_string(k) + " s" + std::to_string(stride), g, l);
    }
  for (Mode mode : {Mode::train, Mode::eval}) {
    auto s = bn_store(3, 8);
    Graph<double> g(&s, mode);
    const auto x = g.input("x", {4, 3, 2, 2}, true);
    const auto c = g.input("c", {4, 3, 2, 2});
    const auto l = g.sum(g.mul(g.batchnorm2d(x, "bn"), c));
    g.bind({{"x", uniform({4, 3, 2, 2}, 9)}, {"c", uniform({4, 3, 2, 2}, 10)}});
    check(mode == Mode::train ? "batchnorm2d train" : "batchnorm2d eval", g, l);
  }
  {
    ParamStore<double> s;
    s.add("w", uniform({4, 3}, 12));
    s.add("b", uniform({4}, 13));
    Graph<double> g(&s);
    const auto x = g.input("x", {2, 3, 2, 2}, true);
    const auto z = g.linear(g.global_avg_pool(g.relu(x)), g.parameter("w"), g.parameter("b"));
    const auto v = g.input("v", {2, 4}, true);
    const auto e = g.exp(g.scale(g.dot(g.l2_normalize(z), v), 0.7));
    const auto l = g.sum(g.log(g.add(e, e)));
    g.bind({{"x", uniform({2, 3, 2, 2}, 14)}, {"v", uniform({2, 4}, 15)}});
    check("relu pool linear normalize dot scale exp add log", g, l);
  }
  {
    Graph<double> g;
    const auto pos = g.input("pos", {4}, true);
    const auto neg = g.input("neg", {4, 6}, true);
    const auto lp = g.contrast_log_prob(g.scale(pos, 5.0), g.scale(neg, 5.0));
    const auto l = g.sum(g.slice_rows(lp, 1, 3));
    g.bind({{"pos", uniform({4}, 16)}, {"neg", uniform({4, 6}, 17)}});
    check("contrast_log_prob slice_rows", g, l);
  }
  {
    ParamStore<double> s;
    s.add("w", uniform({3, 5}, 18));
    s.add("b", uniform({3}, 19));
    Graph<double> g(&s);
    const auto x = g.input("x", {4, 5}, true);
    const auto l = g.softmax_cross_entropy(g.linear(x, g.parameter("w"), g.parameter("b")), {0, 2, 1, 2});
    g.bind({{"x", uniform({4, 5}, 20)}});
    check("softmax_cross_entropy", g, l);
  }
  {
    const std::size_t b = 3;
    auto params = init_params<double>(config.encoder, 5);
    Graph<double> g(&params, Mode::train);
    const auto nodes = build_training_graph(g, config, config.encoder, b, negatives);
    const auto& e = config.encoder;
    Bindings<double> bind{{"x", uniform({nodes.views * b, e.in_channels, e.image_size, e.image_size}, 1)}};
    std::uint64_t seed = 10;
    for (const auto& [h, head] : nodes.heads) {
      const std::string p = "h" + std::to_string(h);
      const std::size_t d = g.node(head.k_a).shape[1];
      bind[p + ".k_a"] = unit_rows(b, d, ++seed);
      bind[p + ".neg"] = unit_rows(negatives, d, ++seed);
      if (head.k_p) bind[p + ".k_p"] = unit_rows(b, d, ++seed);
      if (head.lambda) bind[p + ".lambda"] = uniform({b}, ++seed, 0, 1);
    }
    g.bind(bind);
    check("full training loss", g, nodes.total);
  }
  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

}  // namespace hsa
