// Fast kernels against their serial references on encoder-sized problems.

#include <benchmark/benchmark.h>

#include <vector>

#include "hsa/eval.hpp"
#include "hsa/kernels.hpp"
#include "hsa/random.hpp"

namespace {

using hsa::kernels::ConvGeometry;
using hsa::kernels::Transpose;

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  hsa::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = float(hsa::uniform01(rng) - 0.5);
  return v;
}

// Conv-as-GEMM shape: [out_ch, in_ch*9] x [in_ch*9, batch*hw].
template <bool Fast>
void BM_gemm(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), k = std::size_t(state.range(1)), n = std::size_t(state.range(2));
  auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Fast)
      hsa::kernels::gemm<float>(Transpose::no, Transpose::no, m, n, k, a, b, c);
    else
      hsa::kernels::reference::gemm<float>(Transpose::no, Transpose::no, m, n, k, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(m * n * k), benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_gemm<true>)->Args({16, 72, 4096})->Args({32, 144, 1024})->Args({64, 288, 256});
BENCHMARK(BM_gemm<false>)->Args({16, 72, 4096})->Args({32, 144, 1024})->Args({64, 288, 256});

template <bool Fast>
void BM_im2col(benchmark::State& state) {
  ConvGeometry g{64, std::size_t(state.range(0)), 16, 16, 3, 1, 1};
  auto x = noise(g.batch * g.channels * g.height * g.width, 3);
  std::vector<float> col(g.col_rows() * g.col_cols());
  for (auto _ : state) {
    if constexpr (Fast)
      hsa::kernels::im2col<float>(g, x, col);
    else
      hsa::kernels::reference::im2col<float>(g, x, col);
    benchmark::DoNotOptimize(col.data());
  }
}
BENCHMARK(BM_im2col<true>)->Arg(8)->Arg(16);
BENCHMARK(BM_im2col<false>)->Arg(8)->Arg(16);

template <bool Fast>
void BM_col2im(benchmark::State& state) {
  ConvGeometry g{64, std::size_t(state.range(0)), 16, 16, 3, 1, 1};
  auto col = noise(g.col_rows() * g.col_cols(), 4);
  std::vector<float> dx(g.batch * g.channels * g.height * g.width);
  for (auto _ : state) {
    if constexpr (Fast)
      hsa::kernels::col2im<float>(g, col, dx);
    else
      hsa::kernels::reference::col2im<float>(g, col, dx);
    benchmark::DoNotOptimize(dx.data());
  }
}
BENCHMARK(BM_col2im<true>)->Arg(8)->Arg(16);
BENCHMARK(BM_col2im<false>)->Arg(8)->Arg(16);

template <bool Fast>
void BM_knn_table(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const std::size_t d = 64, k = 10;
  auto rows = noise(n * d, 5);
  std::vector<std::uint32_t> ids(n * k);
  std::vector<double> sc(n * k);
  for (auto _ : state) {
    if constexpr (Fast)
      hsa::kernels::knn_table<float>(n, d, rows, k, ids, sc);
    else
      hsa::kernels::reference::knn_table<float>(n, d, rows, k, ids, sc);
    benchmark::DoNotOptimize(ids.data());
  }
}
BENCHMARK(BM_knn_table<true>)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_knn_table<false>)->Arg(1000)->Unit(benchmark::kMillisecond);

// 20-NN vote of a 1000-sample validation split against a 5000-sample bank.
template <bool Fast>
void BM_knn_predict(benchmark::State& state) {
  const std::size_t n = 5000, q = 1000, d = 32;
  auto bank_rows = noise(n * d, 6), query_rows = noise(q * d, 7);
  hsa::Tensor<double> bank_x({n, d}), queries({q, d});
  for (std::size_t i = 0; i < n * d; ++i) bank_x.data()[i] = bank_rows[i];
  for (std::size_t i = 0; i < q * d; ++i) queries.data()[i] = query_rows[i];
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = int(i % 10);
  const auto bank = hsa::eval::make_feature_bank(bank_x, labels, 10);
  for (auto _ : state) {
    auto pred = Fast ? hsa::eval::knn_predict(bank, queries, 20) : hsa::eval::knn_predict_serial(bank, queries, 20);
    benchmark::DoNotOptimize(pred.data());
  }
}
BENCHMARK(BM_knn_predict<true>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_knn_predict<false>)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
