#include "hsa/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hsa::kernels {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_extent(std::size_t have, std::size_t need, const char* what) {
  if (have < need) throw std::invalid_argument(std::string("kernel buffer too small: ") + what);
}

bool ranks_before(double sa, std::size_t ia, double sb, std::size_t ib) {
  return sa > sb || (sa == sb && ia < ib);
}

}  // namespace

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <class T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  check_extent(a.size(), m * k, "gemm A");
  check_extent(b.size(), k * n, "gemm B");
  check_extent(c.size(), m * n, "gemm C");
  using Map = Eigen::Map<RowMat<T>>;
  using CMap = Eigen::Map<const RowMat<T>>;
  Map cm(c.data(), Eigen::Index(m), Eigen::Index(n));
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  const bool ta = trans_a == Transpose::yes;
  const bool tb = trans_b == Transpose::yes;
  CMap am(a.data(), Eigen::Index(ta ? k : m), Eigen::Index(ta ? m : k));
  CMap bm(b.data(), Eigen::Index(tb ? n : k), Eigen::Index(tb ? k : n));
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      cm.noalias() += lhs * rhs;
    else
      cm.noalias() = lhs * rhs;
  };
  if (!ta && !tb)
    run(am, bm);
  else if (!ta && tb)
    run(am, bm.transpose());
  else if (ta && !tb)
    run(am.transpose(), bm);
  else
    run(am.transpose(), bm.transpose());
}

template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), hw_out = ho * wo;
  const std::size_t cols = g.col_cols();
  check_extent(x.size(), g.batch * g.channels * g.height * g.width, "im2col x");
  check_extent(col.size(), g.col_rows() * cols, "im2col col");
  const auto rows = static_cast<std::ptrdiff_t>(g.col_rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t c = std::size_t(r) / (g.kernel * g.kernel);
    const std::size_t ky = (std::size_t(r) / g.kernel) % g.kernel;
    const std::size_t kx = std::size_t(r) % g.kernel;
    T* out = col.data() + std::size_t(r) * cols;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* plane = x.data() + (n * g.channels + c) * g.height * g.width;
      T* dst = out + n * hw_out;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
        T* drow = dst + oy * wo;
        if (iy < 0 || iy >= std::ptrdiff_t(g.height)) {
          std::fill(drow, drow + wo, T(0));
          continue;
        }
        const T* srow = plane + std::size_t(iy) * g.width;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
          drow[ox] = (ix < 0 || ix >= std::ptrdiff_t(g.width)) ? T(0) : srow[ix];
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> dx) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), hw_out = ho * wo;
  const std::size_t cols = g.col_cols();
  const std::size_t kk = g.kernel * g.kernel;
  check_extent(dx.size(), g.batch * g.channels * g.height * g.width, "col2im dx");
  check_extent(col.size(), g.col_rows() * cols, "col2im col");
  // Each (n, c) plane is written by exactly one iteration.
  const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pc = 0; pc < planes; ++pc) {
    const std::size_t n = std::size_t(pc) / g.channels;
    const std::size_t c = std::size_t(pc) % g.channels;
    T* plane = dx.data() + std::size_t(pc) * g.height * g.width;
    std::fill(plane, plane + g.height * g.width, T(0));
    for (std::size_t q = 0; q < kk; ++q) {
      const std::size_t ky = q / g.kernel, kx = q % g.kernel;
      const T* src = col.data() + (c * kk + q) * cols + n * hw_out;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
        if (iy < 0 || iy >= std::ptrdiff_t(g.height)) continue;
        T* drow = plane + std::size_t(iy) * g.width;
        const T* srow = src + oy * wo;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
          if (ix >= 0 && ix < std::ptrdiff_t(g.width)) drow[ix] += srow[ox];
        }
      }
    }
  }
}

template <class T>
void cnhw_to_nchw(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> src,
                  std::span<T> dst) {
  check_extent(src.size(), batch * channels * hw, "relayout src");
  check_extent(dst.size(), batch * channels * hw, "relayout dst");
  const auto planes = static_cast<std::ptrdiff_t>(batch * channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pc = 0; pc < planes; ++pc) {
    const std::size_t n = std::size_t(pc) / channels, c = std::size_t(pc) % channels;
    const T* s = src.data() + (c * batch + n) * hw;
    std::copy(s, s + hw, dst.data() + std::size_t(pc) * hw);
  }
}

template <class T>
void nchw_to_cnhw(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> src,
                  std::span<T> dst) {
  check_extent(src.size(), batch * channels * hw, "relayout src");
  check_extent(dst.size(), batch * channels * hw, "relayout dst");
  const auto planes = static_cast<std::ptrdiff_t>(batch * channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pc = 0; pc < planes; ++pc) {
    const std::size_t n = std::size_t(pc) / channels, c = std::size_t(pc) % channels;
    const T* s = src.data() + std::size_t(pc) * hw;
    std::copy(s, s + hw, dst.data() + (c * batch + n) * hw);
  }
}

template <class T>
void channel_moments(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> x,
                     std::span<T> mean, std::span<T> var) {
  check_extent(x.size(), batch * channels * hw, "moments x");
  check_extent(mean.size(), channels, "moments mean");
  check_extent(var.size(), channels, "moments var");
  const double count = double(batch * hw);
  const auto nc = static_cast<std::ptrdiff_t>(channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < nc; ++c) {
    double s = 0;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* p = x.data() + (n * channels + std::size_t(c)) * hw;
      for (std::size_t i = 0; i < hw; ++i) s += double(p[i]);
    }
    const double mu = s / count;
    double ss = 0;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* p = x.data() + (n * channels + std::size_t(c)) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = double(p[i]) - mu;
        ss += d * d;
      }
    }
    mean[std::size_t(c)] = T(mu);
    var[std::size_t(c)] = T(ss / count);
  }
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k, std::size_t exclude) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != exclude) idx.push_back(i);
  k = std::min(k, idx.size());
  auto cmp = [&](std::size_t a, std::size_t b) { return ranks_before(scores[a], a, scores[b], b); };
  std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(k), idx.end(), cmp);
  idx.resize(k);
  return idx;
}

template <class T>
void knn_table(std::size_t n, std::size_t d, std::span<const T> rows, std::size_t k,
               std::span<std::uint32_t> ids, std::span<double> scores) {
  check_extent(rows.size(), n * d, "knn rows");
  check_extent(ids.size(), n * k, "knn ids");
  check_extent(scores.size(), n * k, "knn scores");
  if (k >= n && n > 0) throw std::invalid_argument("knn_table: k must be smaller than the row count");
  std::vector<double> bank(rows.begin(), rows.begin() + std::ptrdiff_t(n * d));
  constexpr std::size_t chunk = 256;
  std::vector<double> sims(chunk * n);
  for (std::size_t r0 = 0; r0 < n; r0 += chunk) {
    const std::size_t r1 = std::min(n, r0 + chunk);
    const std::size_t len = r1 - r0;
    gemm<double>(Transpose::no, Transpose::yes, len, n, d,
                 std::span<const double>(bank.data() + r0 * d, len * d), bank, sims);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < std::ptrdiff_t(len); ++r) {
      const std::size_t anchor = r0 + std::size_t(r);
      std::span<const double> row(sims.data() + std::size_t(r) * n, n);
      const auto best = top_k(row, k, anchor);
      for (std::size_t j = 0; j < k; ++j) {
        ids[anchor * k + j] = static_cast<std::uint32_t>(best[j]);
        scores[anchor * k + j] = row[best[j]];
      }
    }
  }
}

namespace reference {

template <class T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  check_extent(a.size(), m * k, "gemm A");
  check_extent(b.size(), k * n, "gemm B");
  check_extent(c.size(), m * n, "gemm C");
  const bool ta = trans_a == Transpose::yes;
  const bool tb = trans_b == Transpose::yes;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta ? a[p * m + i] : a[i * k + p];
        const T bv = tb ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t r = (c * g.kernel + ky) * g.kernel + kx;
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long iy = long(oy * g.stride + ky) - long(g.pad);
              const long ix = long(ox * g.stride + kx) - long(g.pad);
              T v = 0;
              if (iy >= 0 && iy < long(g.height) && ix >= 0 && ix < long(g.width))
                v = x[((n * g.channels + c) * g.height + std::size_t(iy)) * g.width + std::size_t(ix)];
              col[r * cols + (n * ho + oy) * wo + ox] = v;
            }
      }
}

template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> dx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t cols = g.col_cols();
  std::fill(dx.begin(), dx.begin() + std::ptrdiff_t(g.batch * g.channels * g.height * g.width), T(0));
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t r = (c * g.kernel + ky) * g.kernel + kx;
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long iy = long(oy * g.stride + ky) - long(g.pad);
              const long ix = long(ox * g.stride + kx) - long(g.pad);
              if (iy >= 0 && iy < long(g.height) && ix >= 0 && ix < long(g.width))
                dx[((n * g.channels + c) * g.height + std::size_t(iy)) * g.width + std::size_t(ix)] +=
                    col[r * cols + (n * ho + oy) * wo + ox];
            }
      }
}

template <class T>
void channel_moments(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> x,
                     std::span<T> mean, std::span<T> var) {
  const double count = double(batch * hw);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < hw; ++i) s += double(x[(n * channels + c) * hw + i]);
    const double mu = s / count;
    double ss = 0;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        const double dv = double(x[(n * channels + c) * hw + i]) - mu;
        ss += dv * dv;
      }
    mean[c] = T(mu);
    var[c] = T(ss / count);
  }
}

template <class T>
void knn_table(std::size_t n, std::size_t d, std::span<const T> rows, std::size_t k,
               std::span<std::uint32_t> ids, std::span<double> scores) {
  if (k >= n && n > 0) throw std::invalid_argument("knn_table: k must be smaller than the row count");
  std::vector<double> row(n);
  std::vector<std::size_t> order(n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < d; ++p) s += double(rows[a * d + p]) * double(rows[j * d + p]);
      row[j] = s;
    }
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return ranks_before(row[x], x, row[y], y); });
    std::size_t out = 0;
    for (std::size_t j = 0; j < n && out < k; ++j) {
      if (order[j] == a) continue;
      ids[a * k + out] = static_cast<std::uint32_t>(order[j]);
      scores[a * k + out] = row[order[j]];
      ++out;
    }
  }
}

}  // namespace reference

#define HSA_INSTANTIATE_KERNELS(T)                                                                  \
  template void gemm<T>(Transpose, Transpose, std::size_t, std::size_t, std::size_t,                \
                        std::span<const T>, std::span<const T>, std::span<T>, bool);                \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                   \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                   \
  template void cnhw_to_nchw<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,          \
                                std::span<T>);                                                      \
  template void nchw_to_cnhw<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,          \
                                std::span<T>);                                                      \
  template void channel_moments<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,       \
                                   std::span<T>, std::span<T>);                                     \
  template void knn_table<T>(std::size_t, std::size_t, std::span<const T>, std::size_t,             \
                             std::span<std::uint32_t>, std::span<double>);                          \
  template void reference::gemm<T>(Transpose, Transpose, std::size_t, std::size_t, std::size_t,     \
                                   std::span<const T>, std::span<const T>, std::span<T>, bool);     \
  template void reference::im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);        \
  template void reference::col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);        \
  template void reference::channel_moments<T>(std::size_t, std::size_t, std::size_t,                \
                                              std::span<const T>, std::span<T>, std::span<T>);      \
  template void reference::knn_table<T>(std::size_t, std::size_t, std::span<const T>, std::size_t,  \
                                        std::span<std::uint32_t>, std::span<double>);

HSA_INSTANTIATE_KERNELS(float)
HSA_INSTANTIATE_KERNELS(double)

#undef HSA_INSTANTIATE_KERNELS

}  // namespace hsa::kernels
