#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "hsa/augment.hpp"
#include "hsa/random.hpp"
#include "support.hpp"

using namespace hsa;
using namespace hsa::aug;

namespace {

Image random_image(std::uint64_t seed, std::size_t c = 3, std::size_t h = 16, std::size_t w = 16) {
  return test::random_tensor<float>({c, h, w}, seed, 0.0, 1.0);
}

double beta_half_cdf(double x) { return 2 / std::numbers::pi * std::asin(std::sqrt(x)); }

}  // namespace

TEST_CASE("augment_view") {
  const Image img = random_image(1);
  SUBCASE("disabled pipeline is the identity") { CHECK(augment_view(img, identity_view(), 42) == img); }
  SUBCASE("pure in the seed") {
    const ViewParams p;
    CHECK(augment_view(img, p, 5) == augment_view(img, p, 5));
    CHECK_FALSE(augment_view(img, p, 5) == augment_view(img, p, 6));
  }
  SUBCASE("flip-only pipeline is an involution") {
    auto p = identity_view();
    p.flip_prob = 1.0;
    const Image once = augment_view(img, p, 3);
    CHECK_FALSE(once == img);
    CHECK(augment_view(once, p, 3) == img);
    CHECK(hflip(hflip(img)) == img);
  }
  SUBCASE("range and shape") {
    const ViewParams p;
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Image v = augment_view(img, p, s);
      REQUIRE(v.shape() == img.shape());
      for (float x : v.data()) REQUIRE((x >= 0.0f && x <= 1.0f));
    }
  }
  SUBCASE("grayscale equalizes channels") {
    auto p = identity_view();
    p.grayscale_prob = 1.0;
    const Image v = augment_view(img, p, 0);
    for (std::size_t i = 0; i < 256; ++i) {
      CHECK(v[i] == v[256 + i]);
      CHECK(v[i] == v[512 + i]);
    }
  }
  SUBCASE("invalid params") {
    ViewParams p;
    p.flip_prob = 1.5;
    CHECK_THROWS_AS(augment_view(img, p, 0), std::invalid_argument);
    p = ViewParams{};
    p.min_scale = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  }
}

TEST_CASE("augment_batch seeds per sample") {
  data::SyntheticSpec spec;
  spec.samples_per_class = 2;
  spec.height = spec.width = 8;
  const auto ds = data::generate_synthetic(spec, 1);
  const std::vector<std::size_t> ids{3, 7, 11};
  const auto batch = augment_batch(ds, ids, ViewParams{}, 9, 2, 4, 0);
  const std::vector<std::size_t> reordered{11, 3};
  const auto other = augment_batch(ds, reordered, ViewParams{}, 9, 2, 4, 0);
  CHECK(std::equal(batch.row(2).begin(), batch.row(2).end(), other.row(0).begin()));
  CHECK(std::equal(batch.row(0).begin(), batch.row(0).end(), other.row(1).begin()));
  const auto slot1 = augment_batch(ds, ids, ViewParams{}, 9, 2, 4, 1);
  CHECK_FALSE(slot1 == batch);
}

TEST_CASE("sample_lambda") {
  constexpr int kDraws = 100000;
  SUBCASE("alpha 1 is uniform") {
    double sum = 0;
    for (int i = 0; i < kDraws; ++i) sum += sample_lambda(1.0, derive_seed(1, {std::uint64_t(i)}));
    CHECK(std::abs(sum / kDraws - 0.5) < 0.01);
  }
  SUBCASE("alpha 0.5 passes Kolmogorov-Smirnov against the arcsine law") {
    std::vector<double> xs(kDraws);
    for (int i = 0; i < kDraws; ++i) xs[std::size_t(i)] = sample_lambda(0.5, derive_seed(2, {std::uint64_t(i)}));
    std::sort(xs.begin(), xs.end());
    double d = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double f = beta_half_cdf(xs[i]);
      d = std::max({d, double(i + 1) / kDraws - f, f - double(i) / kDraws});
    }
    const double critical = 1.628 / std::sqrt(double(kDraws));  // alpha = 0.01
    MESSAGE("KS statistic " << d << " vs " << critical);
    CHECK(d < critical);
  }
  SUBCASE("bad alpha") {
    CHECK_THROWS_AS(sample_lambda(0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_lambda(-1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("cutmix masks") {
  SUBCASE("lambda 1 keeps the anchor") {
    const auto m = make_cutmix_mask(32, 32, 1.0, 4);
    CHECK(m.lambda_adjusted == 1.0);
    CHECK(std::all_of(m.keep.begin(), m.keep.end(), [](auto k) { return k == 1; }));
    const Image a = random_image(1, 3, 32, 32), p = random_image(2, 3, 32, 32);
    CHECK(cutmix(a, p, m).mixed == a);
  }
  SUBCASE("lambda 0 takes the positive") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto m = make_cutmix_mask(32, 32, 0.0, s);
      CHECK(m.lambda_adjusted == 0.0);
      const Image a = random_image(1, 3, 32, 32), p = random_image(2, 3, 32, 32);
      CHECK(cutmix(a, p, m).mixed == p);
    }
  }
  SUBCASE("interior box at lambda 0.75") {
    const auto m = cutmix_box(32, 32, 0.75, 16, 16);
    const auto zeros = std::count(m.keep.begin(), m.keep.end(), std::uint8_t(0));
    CHECK(zeros == 256);
    CHECK(m.lambda_adjusted == 1.0 - 256.0 / 1024.0);
    CHECK(m.keep[8 * 32 + 8] == 0);
    CHECK(m.keep[7 * 32 + 8] == 1);
    CHECK(m.keep[23 * 32 + 23] == 0);
    CHECK(m.keep[24 * 32 + 23] == 1);
  }
  SUBCASE("clipped box recomputes lambda") {
    const auto m = cutmix_box(32, 32, 0.75, 0, 0);
    CHECK(std::count(m.keep.begin(), m.keep.end(), std::uint8_t(0)) == 64);
    CHECK(m.lambda_adjusted == 1.0 - 64.0 / 1024.0);
  }
  SUBCASE("every pixel comes from exactly one parent") {
    const Image a = random_image(3, 3, 32, 32);
    Image p = random_image(4, 3, 32, 32);
    for (std::uint64_t s = 0; s < 200; ++s) {
      const double lam = sample_lambda(1.0, s);
      const auto m = make_cutmix_mask(32, 32, lam, s + 1000);
      const auto r = cutmix(a, p, m);
      std::size_t ones = 0;
      for (std::size_t i = 0; i < 1024; ++i) {
        ones += m.keep[i];
        for (std::size_t c = 0; c < 3; ++c) {
          const float v = r.mixed[c * 1024 + i];
          REQUIRE(v == (m.keep[i] ? a[c * 1024 + i] : p[c * 1024 + i]));
        }
      }
      REQUIRE(r.lambda_adjusted == double(ones) / 1024.0);
    }
  }
  SUBCASE("identical parents") {
    const Image a = random_image(5, 3, 32, 32);
    CHECK(cutmix(a, a, make_cutmix_mask(32, 32, 0.4, 1)).mixed == a);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(make_cutmix_mask(32, 32, 1.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_cutmix_mask(32, 32, -0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(cutmix(random_image(1, 3, 8, 8), random_image(1, 3, 8, 9), make_cutmix_mask(8, 8, 0.5, 1)),
                    std::invalid_argument);
    CHECK_THROWS_AS(cutmix(random_image(1, 3, 8, 8), random_image(2, 3, 8, 8), make_cutmix_mask(16, 16, 0.5, 1)),
                    std::invalid_argument);
  }
}

TEST_CASE("mixup") {
  const Image a = random_image(1), p = random_image(2);
  CHECK(mixup(a, p, 1.0).mixed == a);
  const Image zeros({3, 4, 4}, 0.0f), ones({3, 4, 4}, 1.0f);
  const auto half = mixup(zeros, ones, 0.5);
  for (float v : half.mixed.data()) CHECK(v == 0.5f);
  const auto r = mixup(a, p, 0.3);
  CHECK(r.lambda_adjusted == 0.3);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(r.mixed[i] == 0.3f * a[i] + (1 - 0.3f) * p[i]);
  CHECK_THROWS_AS(mixup(a, random_image(3, 3, 8, 8), 0.5), std::invalid_argument);
}
