#pragma once

// Data-parallel compute kernels used by the numeric graph and the miner.
//
// Two implementations share every signature: the functions in
// hsa::kernels are the fast path (Eigen GEMM, OpenMP over independent
// outputs); hsa::kernels::reference holds plain serial loops kept as the
// ground truth for tests and the benchmark. Parallel loops never split a
// reduction, so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hsa::kernels {

enum class Transpose : bool { no = false, yes = true };

/// Row-major C[m,n] = op(A) * op(B), or C += op(A) * op(B) when accumulate.
/// op(A) is m x k and op(B) is k x n.
template <class T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate = false);

/// Geometry of a zero-padded square-kernel convolution over an NCHW batch.
struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return batch * out_height() * out_width(); }
};

/// Batch-wide im2col: col[(c,ky,kx), n*Ho*Wo + p].
template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col);

/// Adjoint of im2col. Overwrites dx.
template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> dx);

/// [channels, batch*hw] <-> [batch, channels, hw] relayout.
template <class T>
void cnhw_to_nchw(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> src,
                  std::span<T> dst);
template <class T>
void nchw_to_cnhw(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> src,
                  std::span<T> dst);

/// Per-channel mean and biased variance over (batch, hw) of an NCHW buffer.
template <class T>
void channel_moments(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> x,
                     std::span<T> mean, std::span<T> var);

/// Exact top-k of one similarity row: descending score, ties to the smaller
/// index, `exclude` never selected. Returns indices into `scores`.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k, std::size_t exclude);

/// Cosine top-k for every row of a unit-row matrix [n, d] against all other
/// rows. Similarities are accumulated in double. Output is row-major [n, k].
template <class T>
void knn_table(std::size_t n, std::size_t d, std::span<const T> rows, std::size_t k,
               std::span<std::uint32_t> ids, std::span<double> scores);

namespace reference {

template <class T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate = false);

template <class T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col);

template <class T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> dx);

template <class T>
void channel_moments(std::size_t batch, std::size_t channels, std::size_t hw, std::span<const T> x,
                     std::span<T> mean, std::span<T> var);

template <class T>
void knn_table(std::size_t n, std::size_t d, std::span<const T> rows, std::size_t k,
               std::span<std::uint32_t> ids, std::span<double> scores);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();

}  // namespace hsa::kernels
