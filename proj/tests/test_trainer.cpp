#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "doctest.h"
#include "hsa/gradcheck.hpp"
#include "hsa/loss.hpp"
#include "hsa/trainer.hpp"
#include "support.hpp"
#include "toy_config.hpp"

using namespace hsa;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("hsa_trainer_" + std::to_string(::getpid()) + "_" + name);
}

template <class T>
Trainer<T> make_trainer(const TrainConfig& c) {
  return Trainer<T>(c, load_train_set(c));
}

std::vector<std::size_t> first_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace

TEST_CASE("baseline step loss is plain InfoNCE on the step's tensors") {
  auto c = test::toy_train_config();
  c.variant.baseline_moco = true;
  auto t = make_trainer<double>(c);
  const auto ids = first_ids(8);
  t.train_step(ids);  // fills the queue so the second step has negatives
  StepTrace<double> trace;
  const auto r = t.train_step(ids, &trace);
  CHECK(r.negatives == 8);
  CHECK(r.stages.empty());
  const double expect = info_nce(trace.q_a, trace.k_a, trace.negatives, c.contrast.tau);
  CHECK(std::abs(r.total - expect) < 1e-12);
  CHECK(std::abs(r.main - expect) < 1e-12);
}

TEST_CASE("step loss breakdown adds up") {
  auto c = test::toy_train_config();
  auto t = make_trainer<double>(c);
  t.train_epoch();
  const auto ids = first_ids(8);
  const auto r = t.train_step(ids);
  REQUIRE(r.stages.count(1));
  CHECK(std::abs(r.total - (r.main + r.stages.at(1))) < 1e-9);
  const double weighted = (r.main_terms[0] + r.main_terms[1] + r.main_terms[2]) / 3.0;
  CHECK(std::abs(r.main - weighted) < 1e-9);
  CHECK(r.key_adjoints == 0);
}

TEST_CASE("training graph gradients on the toy encoder") {
  auto c = test::toy_train_config();
  const std::size_t b = 3, k = 16;
  auto params = init_params<double>(c.encoder, 5);
  Graph<double> g(&params, Mode::train);
  const auto nodes = build_training_graph(g, c, c.encoder, b, k);
  CHECK(nodes.views == 3);
  REQUIRE(nodes.heads.size() == 2);
  Bindings<double> bind{{"x", test::random_tensor<double>({nodes.views * b, 3, 8, 8}, 1)}};
  std::uint64_t seed = 10;
  for (const auto& [h, head] : nodes.heads) {
    const std::string p = "h" + std::to_string(h);
    const std::size_t d = g.node(head.k_a).shape[1];
    bind[p + ".k_a"] = test::random_unit_rows<double>(b, d, ++seed);
    bind[p + ".k_p"] = test::random_unit_rows<double>(b, d, ++seed);
    bind[p + ".neg"] = test::random_unit_rows<double>(k, d, ++seed);
    bind[p + ".lambda"] = test::random_tensor<double>({b}, ++seed, 0.0, 1.0);
  }
  g.bind(bind);
  const auto report = finite_diff_check(g, nodes.total, 1e-6);
  MESSAGE("worst relative error " << report.worst << " over " << report.checked << " elements");
  CHECK(report.worst < 1e-4);
  CHECK(report.checked > 0);
}

TEST_CASE("key encoder follows the EMA and never takes gradient") {
  auto c = test::toy_train_config();
  auto t = make_trainer<double>(c);
  const auto ids = first_ids(8);
  for (int s = 0; s < 4; ++s) {
    const auto key_before = t.pair().key;
    const auto r = t.train_step(ids);
    CHECK(r.key_adjoints == 0);
    const auto& key = t.pair().key;
    const auto& query = t.pair().query;
    double worst = 0;
    for (const auto& name : key.names()) {
      if (!key.trainable(name)) continue;
      const auto& kb = key_before.get(name);
      const auto& ka = key.get(name);
      const auto& q = query.get(name);
      for (std::size_t i = 0; i < ka.size(); ++i)
        worst = std::max(worst, std::abs(ka[i] - (c.contrast.momentum * kb[i] + (1 - c.contrast.momentum) * q[i])));
    }
    CHECK(worst < 1e-15);
  }
}

TEST_CASE("stage heads stay untouched when stages are off") {
  auto c = test::toy_train_config();
  c.variant.stages_on = false;
  auto t = make_trainer<float>(c);
  const auto before = t.pair().query;
  t.train_epoch();
  CHECK(t.pair().queues.size() == 1);
  std::size_t companion = 0, moved = 0;
  for (const auto& name : before.names()) {
    const bool changed = !(before.get(name) == t.pair().query.get(name));
    if (name.rfind("comp", 0) == 0) {
      ++companion;
      CHECK_MESSAGE(!changed, name);
    } else if (before.trainable(name) && changed) {
      ++moved;
    }
  }
  CHECK(companion > 0);
  CHECK(moved > 0);
}

TEST_CASE("epoch loop: step records and bank refresh cadence") {
  auto c = test::toy_train_config();
  c.optim.epochs = 7;
  auto t = make_trainer<float>(c);
  const auto log_path = temp_path("metrics.jsonl");
  std::vector<std::int64_t> refreshed;
  {
    MetricsLog log(log_path, "toy");
    for (int e = 0; e < 7; ++e) {
      const auto r = t.train_epoch(&log);
      CHECK(r.steps == 3);
      CHECK(std::isfinite(r.mean_loss));
      if (r.refreshed) refreshed.push_back(r.epoch);
    }
  }
  CHECK(refreshed == std::vector<std::int64_t>{0, 5});
  CHECK(t.bank_epoch() == 5);
  CHECK(t.step() == 21);
  std::ifstream in(log_path);
  std::size_t steps = 0, epochs = 0;
  for (std::string line; std::getline(in, line);) {
    steps += line.find("\"event\":\"step\"") != std::string::npos;
    epochs += line.find("\"event\":\"epoch\"") != std::string::npos;
  }
  CHECK(steps == 21);
  CHECK(epochs == 7);
  std::filesystem::remove(log_path);
}

TEST_CASE("no mining at k = 0 and in the baseline") {
  for (bool baseline : {false, true}) {
    auto c = test::toy_train_config();
    c.variant.baseline_moco = baseline;
    c.miner.k = baseline ? 2 : 0;
    auto t = make_trainer<float>(c);
    CHECK(t.train_epoch().refreshed == false);
    CHECK(t.bank_epoch() == -1);
  }
}

TEST_CASE("strict queue warms up before training") {
  auto c = test::toy_train_config();
  c.contrast.queue_strict = true;
  auto t = make_trainer<float>(c);
  const auto before = t.pair().query;
  const auto ids = first_ids(8);
  CHECK(t.train_step(ids).warmup);
  CHECK(t.pair().query == before);
  CHECK(t.train_step(ids).warmup);
  const auto r = t.train_step(ids);
  CHECK_FALSE(r.warmup);
  CHECK(r.negatives == 16);
}

TEST_CASE("runs are deterministic and resume bit-exactly") {
  const auto c = test::toy_train_config();
  auto a = make_trainer<float>(c);
  auto b = make_trainer<float>(c);
  a.fit();
  b.fit();
  CHECK(a.pair().query == b.pair().query);
  CHECK(a.pair().key == b.pair().key);

  const auto path = temp_path("resume.ckpt");
  auto first = make_trainer<float>(c);
  first.train_epoch();
  first.train_epoch();
  first.save_checkpoint(path);
  auto resumed = make_trainer<float>(c);
  resumed.load_checkpoint(path);
  CHECK(resumed.epoch() == 2);
  CHECK(resumed.step() == first.step());
  resumed.fit();
  CHECK(resumed.epoch() == 5);
  CHECK(resumed.pair().query == a.pair().query);
  CHECK(resumed.pair().key == a.pair().key);
  for (const auto& [h, q] : a.pair().queues) CHECK(q.buffer() == resumed.pair().queues.at(h).buffer());

  auto other = c;
  other.contrast.tau = 0.3;
  auto mismatched = make_trainer<float>(other);
  CHECK_THROWS_WITH_AS(mismatched.load_checkpoint(path), doctest::Contains("different configuration"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects damaged files") {
  const auto c = test::toy_train_config();
  auto t = make_trainer<float>(c);
  t.train_epoch();
  const auto path = temp_path("damaged.ckpt");
  t.save_checkpoint(path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  auto fresh = make_trainer<float>(c);
  const auto before = fresh.pair().query;
  CHECK_THROWS_WITH_AS(fresh.load_checkpoint(path), doctest::Contains("truncated"), std::runtime_error);
  CHECK(fresh.pair().query == before);
  CHECK(fresh.epoch() == 0);
  std::filesystem::remove(path);
}

TEST_CASE("trainer rejects mismatched data") {
  auto c = test::toy_train_config();
  auto ds = load_train_set(c);
  c.encoder.image_size = 16;
  CHECK_THROWS_AS(Trainer<float>(c, ds), std::invalid_argument);
}
