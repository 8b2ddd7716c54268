#include <cmath>

#include "doctest.h"
#include "hsa/gradcheck.hpp"
#include "hsa/loss.hpp"
#include "hsa/random.hpp"
#include "loss_oracle.hpp"
#include "support.hpp"

using namespace hsa;

namespace {

oracle::Mat to_mat(const Tensor<double>& t) {
  oracle::Mat m;
  for (std::size_t r = 0; r < t.dim(0); ++r) m.emplace_back(t.row(r).begin(), t.row(r).end());
  return m;
}

ContrastInputs<double> random_inputs(std::size_t b, std::size_t d, std::size_t k, std::uint64_t seed) {
  ContrastInputs<double> in;
  in.q_a = test::random_unit_rows<double>(b, d, seed);
  in.q_p = test::random_unit_rows<double>(b, d, seed + 1);
  in.q_mix = test::random_unit_rows<double>(b, d, seed + 2);
  in.k_a = test::random_unit_rows<double>(b, d, seed + 3);
  in.k_p = test::random_unit_rows<double>(b, d, seed + 4);
  in.negatives = test::random_unit_rows<double>(k, d, seed + 5);
  Rng rng(seed);
  for (std::size_t i = 0; i < b; ++i) in.lambda.push_back(uniform01(rng));
  return in;
}

oracle::Head to_head(const ContrastInputs<double>& in) {
  return {to_mat(in.q_a), to_mat(in.q_p), to_mat(in.q_mix), to_mat(in.k_a), to_mat(in.k_p), to_mat(in.negatives), in.lambda};
}

// Unit vectors e_0..: q along e_0, everything else orthogonal to it.
Tensor<double> basis(std::size_t rows, std::size_t d, std::size_t axis) {
  Tensor<double> t({rows, d});
  for (std::size_t r = 0; r < rows; ++r) t.row(r)[axis] = 1;
  return t;
}

ContrastInputs<double> uniform_inputs(std::size_t b, std::size_t k) {
  ContrastInputs<double> in;
  in.q_a = in.q_p = in.q_mix = basis(b, 8, 0);
  in.k_a = in.k_p = basis(b, 8, 1);
  in.negatives = basis(k, 8, 2);
  in.lambda.assign(b, 0.5);
  return in;
}

}  // namespace

TEST_CASE("closed forms") {
  SUBCASE("uniform logits give ln(K+1)") {
    const auto in = uniform_inputs(3, 4);
    CHECK(std::abs(info_nce(in.q_a, in.k_a, in.negatives, 1.0) - std::log(5.0)) < 1e-9);
    CHECK(std::abs(info_nce(in.q_a, in.k_a, in.negatives, 1.0) - 1.6094379124341003) < 1e-9);
    CHECK(std::abs(pair_loss(in.q_a, in.k_a, in.k_p, in.negatives, 1.0) - std::log(5.0)) < 1e-9);
    CHECK(std::abs(stage_loss(in, 1.0) - std::log(5.0)) < 1e-9);
    std::map<int, ContrastInputs<double>> stages{{2, in}, {3, in}};
    CHECK(std::abs(total_loss(in, stages, 1.0).total - 3 * std::log(5.0)) < 1e-9);
    CHECK(total_loss(in, {}, 1.0).stages.empty());
  }
  SUBCASE("aligned positive, orthogonal negatives") {
    const auto q = basis(1, 8, 0);
    const double expect = -std::log(std::exp(5.0) / (std::exp(5.0) + 4));
    CHECK(std::abs(info_nce(q, q, basis(4, 8, 1), 0.2) - expect) < 1e-12);
    CHECK(expect == doctest::Approx(0.02660).epsilon(1e-3));
  }
  SUBCASE("no negatives") {
    const auto in = random_inputs(4, 6, 0, 1);
    CHECK(info_nce(in.q_a, in.k_a, in.negatives, 0.2) == 0.0);
  }
}

TEST_CASE("scalar-loop oracle agreement") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 5, d = 2 + rng() % 10, k = rng() % 12;
    const double tau = 0.05 + uniform01(rng);
    const auto in = random_inputs(b, d, k, rng());
    const auto h = to_head(in);
    oracle::Vec nce, pr, mx;
    for (std::size_t i = 0; i < b; ++i) {
      nce.push_back(oracle::info_nce(h.qa[i], h.ka[i], h.neg, tau));
      pr.push_back(oracle::pair(h.qa[i], h.ka[i], h.kp[i], h.neg, tau));
      mx.push_back(oracle::mixed(h.qm[i], h.ka[i], h.kp[i], h.neg, tau, h.lambda[i]));
    }
    REQUIRE(std::abs(info_nce(in.q_a, in.k_a, in.negatives, tau) - oracle::mean(nce)) < 1e-12);
    REQUIRE(std::abs(pair_loss(in.q_a, in.k_a, in.k_p, in.negatives, tau) - oracle::mean(pr)) < 1e-12);
    REQUIRE(std::abs(mixed_loss(in.q_mix, in.k_a, in.k_p, in.negatives, tau, in.lambda) - oracle::mean(mx)) < 1e-12);
    const double w[3] = {uniform01(rng), uniform01(rng), uniform01(rng)};
    const double s = w[0] + w[1] + w[2];
    REQUIRE(std::abs(stage_loss(in, tau) - oracle::head(h, tau, 1.0 / 3, 1.0 / 3, 1.0 / 3)) < 1e-12);
    const auto s2 = random_inputs(b, d + 1, k, rng()), s3 = random_inputs(b, d + 2, k + 1, rng());
    const auto bd = total_loss(in, {{2, s2}, {3, s3}}, tau, LossWeights::from(w));
    const double expect =
        oracle::total(h, {{2, to_head(s2)}, {3, to_head(s3)}}, tau, w[0] / s, w[1] / s, w[2] / s);
    REQUIRE(std::abs(bd.total - expect) < 1e-12);
    REQUIRE(std::abs(bd.main + bd.stages.at(2) + bd.stages.at(3) - bd.total) < 1e-12);
  }
}

TEST_CASE("reductions and properties") {
  const auto in = random_inputs(4, 8, 8, 5);
  const double tau = 0.2;
  SUBCASE("duplicate positive collapses to InfoNCE") {
    CHECK(std::abs(pair_loss(in.q_a, in.k_a, in.k_a, in.negatives, tau) - info_nce(in.q_a, in.k_a, in.negatives, tau)) < 1e-12);
  }
  SUBCASE("pair symmetry") {
    CHECK(std::abs(pair_loss(in.q_a, in.k_a, in.k_p, in.negatives, tau) - pair_loss(in.q_a, in.k_p, in.k_a, in.negatives, tau)) < 1e-12);
  }
  SUBCASE("mixed boundaries and affinity") {
    const std::vector<double> one(4, 1.0), zero(4, 0.0), half(4, 0.5);
    const double l1 = mixed_loss(in.q_mix, in.k_a, in.k_p, in.negatives, tau, one);
    const double l0 = mixed_loss(in.q_mix, in.k_a, in.k_p, in.negatives, tau, zero);
    CHECK(std::abs(l1 - info_nce(in.q_mix, in.k_a, in.negatives, tau)) < 1e-12);
    CHECK(std::abs(l0 - info_nce(in.q_mix, in.k_p, in.negatives, tau)) < 1e-12);
    CHECK(std::abs(mixed_loss(in.q_mix, in.k_a, in.k_p, in.negatives, tau, half) - 0.5 * (l0 + l1)) < 1e-12);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      const double lam = uniform01(rng);
      const std::vector<double> l(4, lam);
      REQUIRE(std::abs(mixed_loss(in.q_mix, in.k_a, in.k_p, in.negatives, tau, l) - (lam * l1 + (1 - lam) * l0)) < 1e-12);
    }
    CHECK_THROWS_AS(mixed_loss(in.q_mix, in.k_a, in.k_p, in.negatives, tau, std::vector<double>(4, 1.5)), std::invalid_argument);
  }
  SUBCASE("equal weights average the three terms") {
    const auto bd = total_loss(in, {}, tau);
    CHECK(std::abs(bd.main - (bd.main_terms[0] + bd.main_terms[1] + bd.main_terms[2]) / 3) < 1e-12);
  }
  SUBCASE("baseline weights reduce to InfoNCE") {
    auto same = in;
    same.k_p = same.k_a;
    CHECK(std::abs(total_loss(same, {}, tau, {1, 0, 0}).total - info_nce(in.q_a, in.k_a, in.negatives, tau)) < 1e-12);
    CHECK(std::abs(total_loss(in, {}, tau, {}, {false, false}).total - info_nce(in.q_a, in.k_a, in.negatives, tau)) < 1e-12);
  }
  SUBCASE("identical stage and main inputs") {
    CHECK(std::abs(stage_loss(in, tau) - total_loss(in, {}, tau).main) < 1e-12);
  }
  SUBCASE("variant weights renormalize") {
    const auto w = effective_weights({}, {true, false});
    CHECK(w.anchor == 0.5);
    CHECK(w.positive == 0.5);
    CHECK(w.mixed == 0.0);
    CHECK(effective_weights({}, {false, false}).anchor == 1.0);
  }
  SUBCASE("nonnegative and finite over the temperature range") {
    for (double t : {0.01, 0.07, 0.2, 1.0, 10.0}) {
      const double v = total_loss(in, {{1, in}}, t).total;
      CHECK(std::isfinite(v));
      CHECK(v >= 0);
    }
  }
  SUBCASE("monotone in the positive logit") {
    // Rotate q toward k in the plane they span; negatives fixed orthogonal.
    const std::size_t d = 6;
    const auto k = basis(1, d, 0), negs = basis(3, d, 2);
    double prev = 1e300;
    for (int i = 0; i <= 10; ++i) {
      const double c = -1 + 0.2 * i, s = std::sqrt(std::max(0.0, 1 - c * c));
      Tensor<double> q({1, d});
      q[0] = c;
      q[1] = s;
      const double v = info_nce(q, k, negs, 0.2);
      CHECK(v < prev);
      prev = v;
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(info_nce(in.q_a, in.k_a, in.negatives, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(info_nce(in.q_a, in.k_a, in.negatives, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(LossWeights::from(std::vector<double>{1, 2}), std::invalid_argument);
    auto bad = random_inputs(4, 5, 8, 1);
    CHECK_THROWS_AS(stage_loss(ContrastInputs<double>{in.q_a, in.q_p, in.q_mix, bad.k_a, in.k_p, in.negatives, in.lambda}, tau),
                    std::invalid_argument);
  }
}

TEST_CASE("gradients reach only queries") {
  Graph<double> g;
  const std::size_t b = 3, d = 4, k = 5;
  HeadQueries hq{g.input("qa", {b, d}, true), g.input("qp", {b, d}, true), g.input("qm", {b, d}, true)};
  const auto h = build_head_loss(g, "h", hq, k, 0.2, {}, {});
  const auto in = random_inputs(b, d, k, 9);
  Tensor<double> lam({b}, 0.3);
  g.bind({{"qa", in.q_a}, {"qp", in.q_p}, {"qm", in.q_mix}, {"h.k_a", in.k_a}, {"h.k_p", in.k_p},
          {"h.neg", in.negatives}, {"h.lambda", lam}});
  const auto report = finite_diff_check(g, h.total, 1e-6);
  CHECK(report.worst < 1e-6);
  g.evaluate();
  const auto grads = g.backward(h.total);
  CHECK(grads.size() == 3);
  for (auto id : {h.k_a, *h.k_p, h.neg, *h.lambda}) CHECK_FALSE(g.has_adjoint(id));
}
