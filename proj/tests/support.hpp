#pragma once

#include <cmath>
#include <random>

#include "hsa/random.hpp"
#include "hsa/tensor.hpp"

namespace hsa::test {

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = T(lo + (hi - lo) * uniform01(rng));
  return t;
}

/// Rows normalized to unit length.
template <class T>
Tensor<T> random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor<T> t({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    std::vector<double> v(d);
    for (auto& x : v) {
      x = gauss(rng);
      s += x * x;
    }
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) t[r * d + j] = T(v[j] / s);
  }
  return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace hsa::test
