#include <random>
#include <string>

#include "doctest.h"
#include "hsa/config.hpp"
#include "toy_config.hpp"

using namespace hsa;

namespace {

bool mentions(const ConfigError& e, const std::string& key) {
  for (const auto& p : e.problems())
    if (p.find(key) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("config serialization round-trips random configurations") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 50; ++i) {
    TrainConfig c;
    c.seed = rng();
    c.contrast.tau = u(rng);
    c.contrast.momentum = u(rng);
    c.contrast.queue_capacity = rng() % 5000;
    c.contrast.queue_strict = rng() % 2;
    c.miner.k = rng() % 50;
    c.weights = {u(rng), u(rng), u(rng)};
    c.mix.kind = rng() % 2 ? MixKind::cutmix : MixKind::mixup;
    c.variant = {bool(rng() % 2), bool(rng() % 2), bool(rng() % 2), bool(rng() % 2)};
    c.optim.base_lr = u(rng);
    c.eval.knn_neighbors = {1 + rng() % 100, 1 + rng() % 300};
    c.data.synthetic.noise = u(rng) / 3;
    const TrainConfig back = parse_config_text(to_json_string(c));
    CHECK(back == c);
    CHECK(config_hash(back) == config_hash(c));
  }
}

TEST_CASE("hash separates configurations that differ in one field") {
  TrainConfig a, b;
  b.contrast.tau = a.contrast.tau + 1e-9;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.seed = a.seed + 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("missing keys keep defaults and overrides apply") {
  CHECK(parse_config_text("") == TrainConfig{});
  CHECK(parse_config_text("{}") == TrainConfig{});
  const auto c = parse_config_text(R"({"optim": {"epochs": 3}})", {"contrast.tau=0.5", "eval.knn_neighbors=[5,7]"});
  CHECK(c.optim.epochs == 3);
  CHECK(c.contrast.tau == 0.5);
  CHECK(c.eval.knn_neighbors == std::vector<std::size_t>{5, 7});
  CHECK(c.optim.batch_size == TrainConfig{}.optim.batch_size);
}

TEST_CASE("unknown keys and type mismatches are reported together") {
  try {
    parse_config_text(R"({"optim": {"epochs": "many", "speed": 2}, "bogus": 1})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 3);
    CHECK(mentions(e, "optim.epochs"));
    CHECK(mentions(e, "optim.speed"));
    CHECK(mentions(e, "bogus"));
  }
}

TEST_CASE("validation lists every invalid field") {
  TrainConfig c = test::toy_train_config();
  CHECK_NOTHROW(validate(c));
  c.contrast.tau = 0;
  c.optim.momentum = 1;
  c.miner.k = 24;
  c.eval.entropy_base = "10";
  try {
    validate(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 4);
    CHECK(mentions(e, "contrast.tau"));
    CHECK(mentions(e, "optim.momentum"));
    CHECK(mentions(e, "miner.k"));
    CHECK(mentions(e, "eval.entropy_base"));
  }
}

TEST_CASE("baseline composition switches every addition off") {
  TrainConfig c;
  c.variant.baseline_moco = true;
  const auto v = c.effective_variant();
  CHECK_FALSE(v.add_qp);
  CHECK_FALSE(v.add_mix);
  CHECK_FALSE(v.stages_on);
  CHECK_FALSE(c.mines_positives());
}

TEST_CASE("acceptance configuration is valid") { CHECK_NOTHROW(validate(acceptance_config())); }
