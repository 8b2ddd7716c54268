#include <cmath>

#include "doctest.h"
#include "hsa/miner.hpp"
#include "hsa/random.hpp"
#include "support.hpp"

using namespace hsa;

namespace {

// Exhaustive scan: sort all non-anchor ids by (score desc, id asc).
std::vector<std::size_t> brute_force(const Tensor<double>& rows, std::size_t anchor, std::size_t k) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == anchor) continue;
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += rows.row(anchor)[j] * rows.row(i)[j];
    all.emplace_back(-s, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(all[j].second);
  return out;
}

}  // namespace

TEST_CASE("knn_neighbors") {
  SUBCASE("hand example") {
    EmbeddingBank<double> bank{Tensor<double>({3, 2}, {1, 0, 0, 1, 0.6, 0.8}), 0};
    const auto n = knn_neighbors(bank, 0, 1);
    REQUIRE(n.ids.size() == 1);
    CHECK(n.ids[0] == 2);
    CHECK(n.scores[0] == doctest::Approx(0.6));
  }
  SUBCASE("k = 0 falls back to the anchor") {
    EmbeddingBank<double> bank{test::random_unit_rows<double>(5, 3, 1), 0};
    const auto n = knn_neighbors(bank, 3, 0);
    CHECK(n.ids.empty());
    CHECK(sample_positive(n, 7) == 3);
  }
  SUBCASE("ties go to the smaller id") {
    EmbeddingBank<double> bank{Tensor<double>({4, 2}, {1, 0, 0, 1, 0, 1, 0, 1}), 0};
    const auto n = knn_neighbors(bank, 0, 2);
    CHECK(n.ids == std::vector<std::size_t>{1, 2});
  }
  SUBCASE("matches brute force and the precomputed table") {
    const auto rows = test::random_unit_rows<double>(1000, 64, 2);
    EmbeddingBank<double> bank{rows, 0};
    for (std::size_t k : {1, 5, 10, 50}) {
      PositiveMiner<double> miner(k, 5);
      miner.restore(bank);
      std::size_t mismatches = 0;
      for (std::size_t a = 0; a < 1000; ++a) {
        const auto expect = brute_force(rows, a, k);
        const auto got = knn_neighbors(bank, a, k);
        mismatches += got.ids != expect;
        mismatches += miner.neighbors(a).ids != expect;
        for (std::size_t j = 1; j < k; ++j) REQUIRE(got.scores[j] <= got.scores[j - 1]);
        for (auto id : got.ids) REQUIRE(id != a);
      }
      CHECK(mismatches == 0);
    }
  }
  SUBCASE("errors") {
    EmbeddingBank<double> bank{test::random_unit_rows<double>(5, 3, 1), 0};
    CHECK_THROWS_AS(knn_neighbors(bank, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(knn_neighbors(bank, 5, 1), std::out_of_range);
  }
}

TEST_CASE("sample_positive") {
  NeighborSet single{0, {4}, {0.9}};
  for (std::uint64_t s = 0; s < 10; ++s) CHECK(sample_positive(single, s) == 4);
  NeighborSet ten{0, {}, {}};
  for (std::size_t i = 1; i <= 10; ++i) ten.ids.push_back(i);
  std::vector<int> counts(11);
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) ++counts[sample_positive(ten, derive_seed(1, {std::uint64_t(i)}))];
  const double sigma = std::sqrt(kDraws * 0.1 * 0.9);
  for (std::size_t i = 1; i <= 10; ++i) CHECK(std::abs(counts[i] - kDraws * 0.1) < 3 * sigma);
}

TEST_CASE("refresh_bank") {
  const auto cfg = toy_encoder_config();
  auto params = init_params<double>(cfg, 3);
  data::SyntheticSpec spec;
  spec.samples_per_class = 3;
  spec.height = spec.width = 8;
  const auto ds = data::generate_synthetic(spec, 1);
  const auto a = refresh_bank(params, cfg, ds, 0, 7);
  const auto b = refresh_bank(params, cfg, ds, 0, 30);
  CHECK(a.rows.shape() == Shape{30, cfg.pooled_dim()});
  for (std::size_t i = 0; i < 30; ++i) {
    double s = 0;
    for (double v : a.rows.row(i)) s += v * v;
    CHECK(std::abs(std::sqrt(s) - 1) < 1e-6);
  }
  for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i] == doctest::Approx(b.rows[i]).epsilon(1e-12));
  CHECK(refresh_bank(params, cfg, ds, 0, 7).rows == a.rows);

  const std::size_t i = 17;
  const auto direct = encode_with_taps(params, cfg, slice_rows(ds.images, i, i + 1), Mode::eval).pooled;
  double s = 0;
  for (double v : direct.data()) s += v * v;
  for (std::size_t j = 0; j < cfg.pooled_dim(); ++j) CHECK(a.rows.row(i)[j] == doctest::Approx(direct[j] / std::sqrt(s)).epsilon(1e-12));

  SUBCASE("refresh cadence") {
    PositiveMiner<double> miner(2, 5);
    CHECK(miner.due(0));
    miner.refresh(params, cfg, ds, 0);
    CHECK(miner.bank().epoch == 0);
    for (std::int64_t e = 1; e < 5; ++e) CHECK_FALSE(miner.due(e));
    CHECK(miner.due(5));
    CHECK(miner.positive(3, 1) != 3);
    PositiveMiner<double> self(0, 5);
    self.refresh(params, cfg, ds, 0);
    CHECK(self.positive(3, 1) == 3);
  }
}
