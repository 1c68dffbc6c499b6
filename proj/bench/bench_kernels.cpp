// Serial reference vs OpenMP kernels on supernet-sized problems.
//
//   hournas_bench [--benchmark_filter=...]

#include <vector>

#include <benchmark/benchmark.h>

#include "hournas/kernels.hpp"
#include "hournas/ops.hpp"
#include "hournas/rng.hpp"

using namespace hournas;

namespace {

std::vector<Real> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return v;
}

// args: M (= N = K), threads (0 = serial reference)
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const int threads = static_cast<int>(state.range(1));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<Real> c(n * n);
  if (threads > 0) kernels::set_num_threads(threads);
  for (auto _ : state) {
    if (threads == 0)
      kernels::reference::gemm(n, n, n, {a.data(), n}, {b.data(), n}, 0, c.data(), n);
    else
      kernels::gemm(n, n, n, {a.data(), n}, {b.data(), n}, 0, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// args: channels, threads (0 = serial reference); 3x3 kernel on 32x32 planes
void BM_Im2col(benchmark::State& state) {
  const kernels::ConvGeometry g{static_cast<std::size_t>(state.range(0)), 32, 32, 3, 1, 1};
  const int threads = static_cast<int>(state.range(1));
  const auto image = random_vector(g.channels * g.height * g.width, 3);
  std::vector<Real> col(g.col_rows() * g.col_cols());
  if (threads > 0) kernels::set_num_threads(threads);
  for (auto _ : state) {
    if (threads == 0)
      kernels::reference::im2col(image.data(), g, col.data());
    else
      kernels::im2col(image.data(), g, col.data());
    benchmark::DoNotOptimize(col.data());
  }
}

// Full conv2d forward (im2col + GEMM) on a batch of 32, parallel kernels.
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  kernels::set_num_threads(static_cast<int>(state.range(1)));
  Tensor x({32, c, 12, 12}, random_vector(32 * c * 144, 4));
  Tensor w({c, c, 3, 3}, random_vector(c * c * 9, 5));
  for (auto _ : state) {
    auto g = Graph::inference();
    benchmark::DoNotOptimize(ops::conv2d(g, x, w, {1, 1, 1}));
  }
}

}  // namespace

BENCHMARK(BM_Gemm)->ArgsProduct({{64, 128, 256}, {0, 1, 2, 4}});
BENCHMARK(BM_Im2col)->ArgsProduct({{16, 64}, {0, 1, 4}});
BENCHMARK(BM_Conv2d)->ArgsProduct({{16, 32}, {1, 4}});

BENCHMARK_MAIN();
