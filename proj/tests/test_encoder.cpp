#include <cmath>

#include "doctest.h"
#include "hsa/encoder.hpp"
#include "hsa/gradcheck.hpp"
#include "support.hpp"

using namespace hsa;

namespace {

double row_norm(std::span<const float> r) {
  double s = 0;
  for (float v : r) s += double(v) * v;
  return std::sqrt(s);
}

// Independent tally of trainable scalars from the layer list.
std::size_t hand_tally(const EncoderConfig& c) {
  auto conv = [](std::size_t o, std::size_t i, std::size_t k) { return o * i * k * k; };
  auto bn = [](std::size_t ch) { return 2 * ch; };
  auto fc = [](std::size_t o, std::size_t i) { return o * i + o; };
  std::size_t n = conv(c.stem_channels, c.in_channels, 3) + bn(c.stem_channels);
  std::size_t in = c.stem_channels;
  for (auto out : c.stage_channels) {
    n += conv(out, in, 3) + bn(out);
    for (std::size_t b = 1; b < c.blocks_per_stage; ++b) n += conv(out, out, 3) + bn(out);
    in = out;
  }
  n += fc(in, in) + fc(c.embed_dim, in);
  for (int l : c.companion_stages) {
    const auto ch = c.stage_channels[std::size_t(l - 1)];
    n += conv(ch, ch, 1) + conv(ch, ch, 3) + conv(ch, ch, 1) + 3 * bn(ch) + fc(ch, ch) + fc(c.companion_out(), ch);
  }
  return n;
}

}  // namespace

TEST_CASE("init_params") {
  const EncoderConfig cfg;
  const auto a = init_params<float>(cfg, 3);
  CHECK(a == init_params<float>(cfg, 3));
  CHECK_FALSE(a == init_params<float>(cfg, 4));
  const auto key = a;
  CHECK(key == a);
  CHECK(key.isomorphic(a));
  CHECK(parameter_count(a) == hand_tally(cfg));
  // default: 3->32 stem, 32/64/128/256 stages, 128-d head, companions at 2 and 3
  CHECK(hand_tally(cfg) == 1553120);
  const auto toy = toy_encoder_config();
  CHECK(parameter_count(init_params<double>(toy, 1)) == hand_tally(toy));
}

TEST_CASE("config validation") {
  EncoderConfig c;
  c.companion_stages = {4};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.companion_stages = {0};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = EncoderConfig{};
  c.stage_downsample.pop_back();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = EncoderConfig{};
  c.embed_dim = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("encode_with_taps") {
  EncoderConfig cfg;
  auto params = init_params<float>(cfg, 7);
  const auto images = test::random_tensor<float>({8, 3, 32, 32}, 1, 0.0, 1.0);
  const auto out = encode_with_taps(params, cfg, images, Mode::eval);
  SUBCASE("tap sizes halve per downsampling stage") {
    REQUIRE(out.taps.size() == 4);
    const std::size_t sides[] = {32, 16, 8, 4};
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(out.taps[l].shape() == Shape{8, cfg.stage_channels[l], sides[l], sides[l]});
      CHECK(cfg.tap_size(int(l + 1)) == sides[l]);
    }
    CHECK(out.pooled.shape() == Shape{8, 256});
  }
  SUBCASE("unit embeddings") {
    CHECK(out.embedding.shape() == Shape{8, 128});
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(row_norm(out.embedding.row(i)) - 1) < 1e-6);
    for (const auto& [l, q] : out.companions) {
      CHECK((l == 2 || l == 3));
      for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(row_norm(q.row(i)) - 1) < 1e-6);
    }
  }
  SUBCASE("eval mode is batch independent") {
    const auto single = encode_with_taps(params, cfg, slice_rows(images, 5, 6), Mode::eval);
    for (std::size_t j = 0; j < 128; ++j) CHECK(std::abs(single.embedding[j] - out.embedding.row(5)[j]) < 1e-5);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(encode_with_taps(params, cfg, test::random_tensor<float>({2, 3, 16, 16}, 1), Mode::eval),
                    std::invalid_argument);
  }
}

TEST_CASE("companion heads are side branches") {
  const auto cfg = toy_encoder_config();
  auto params = init_params<double>(cfg, 2);
  const auto x = test::random_tensor<double>({4, 3, 8, 8}, 3);
  Graph<double> with(&params, Mode::train), without(&params, Mode::train);
  const auto a = build_encoder(with, cfg, 4, "x", true);
  const auto b = build_encoder(without, cfg, 4, "x", false);
  const ForwardOptions frozen{.update_running_stats = false};
  with.forward({{"x", x}}, frozen);
  without.forward({{"x", x}}, frozen);
  CHECK(with.value(a.embedding) == without.value(b.embedding));
  CHECK(with.value(a.pooled) == without.value(b.pooled));

  // A loss on the stage-1 companion reaches no parameter past stage 1.
  const auto target = with.input("t", {4, cfg.companion_out()});
  const auto loss = with.sum(with.dot(a.companions.at(1), target));
  with.forward({{"x", x}, {"t", test::random_tensor<double>({4, cfg.companion_out()}, 4)}}, frozen);
  with.backward(loss);
  std::size_t reached = 0;
  for (const auto& name : params.names()) {
    const auto id = with.find(name);
    if (!id || !params.trainable(name)) continue;
    const bool later = name.starts_with("stage2") || name.starts_with("head");
    if (later) CHECK_MESSAGE(!with.has_adjoint(*id), name);
    reached += with.has_adjoint(*id);
  }
  CHECK(reached > 0);
}

TEST_CASE("companion_project") {
  EncoderConfig cfg;
  auto params = init_params<double>(cfg, 5);
  SUBCASE("contract") {
    const auto f = test::random_tensor<double>({3, 64, 16, 16}, 1, 0.0, 1.0);
    const auto p = companion_project(params, cfg, 2, f);
    CHECK(p.embedding.shape() == Shape{3, 128});
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (double v : p.embedding.row(i)) s += v * v;
      CHECK(std::abs(std::sqrt(s) - 1) < 1e-6);
      CHECK_FALSE(p.degenerate[i]);
    }
  }
  SUBCASE("zero feature map is degenerate") {
    const auto p = companion_project(params, cfg, 3, Tensor<double>({2, 128, 8, 8}));
    for (std::size_t i = 0; i < 2; ++i) CHECK(p.degenerate[i]);
    for (double v : p.embedding.data()) CHECK(v == 0.0);
  }
  SUBCASE("distinct inputs give distinct embeddings") {
    auto fparams = init_params<float>(cfg, 5);
    const auto imgs = test::random_tensor<float>({200, 3, 32, 32}, 9, 0.0, 1.0);
    const auto out = encode_with_taps(fparams, cfg, imgs, Mode::eval);
    for (std::size_t i = 0; i < 100; ++i) {
      const auto a = out.companions.at(2).row(2 * i), b = out.companions.at(2).row(2 * i + 1);
      CHECK_FALSE(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
  SUBCASE("inactive stage") {
    CHECK_THROWS_AS(companion_project(params, cfg, 1, Tensor<double>({1, 32, 32, 32})), std::invalid_argument);
  }
}

TEST_CASE("toy encoder gradients") {
  const auto cfg = toy_encoder_config();
  auto params = init_params<double>(cfg, 11);
  Graph<double> g(&params, Mode::train);
  const auto nodes = build_encoder(g, cfg, 3, "x", true);
  const auto t1 = g.input("t1", {3, cfg.embed_dim});
  const auto t2 = g.input("t2", {3, cfg.companion_out()});
  const auto loss = g.sum(g.add(g.dot(nodes.embedding, t1), g.dot(nodes.companions.at(1), t2)));
  g.bind({{"x", test::random_tensor<double>({3, 3, 8, 8}, 1)},
          {"t1", test::random_tensor<double>({3, cfg.embed_dim}, 2)},
          {"t2", test::random_tensor<double>({3, cfg.companion_out()}, 3)}});
  const auto report = finite_diff_check(g, loss, 1e-6);
  MESSAGE("worst relative error " << report.worst << " over " << report.checked << " elements, " << report.excluded
                                  << " excluded");
  CHECK(report.worst < 1e-4);
  CHECK(report.checked > 0);
}
