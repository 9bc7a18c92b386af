// Serial vs OpenMP kernels. Run with OMP_NUM_THREADS set to compare scaling.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "trt/kernels.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      trt::kernels::matmul<float>(a, b, c, n, n, n);
    else
      trt::kernels::serial::matmul<float>(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(n * n * n));
}

template <bool Parallel>
void BM_conv3x3(benchmark::State& state) {
  const auto side = std::size_t(state.range(0));
  const trt::kernels::ConvShape s{side, 32, 32};
  const auto in = random_vec(s.positions() * s.in_channels, 3);
  const auto w = random_vec(s.out_channels * s.in_channels * 9, 4);
  const auto bias = random_vec(s.out_channels, 5);
  std::vector<float> out(s.positions() * s.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      trt::kernels::conv3x3<float>(in, w, bias, out, s);
    else
      trt::kernels::serial::conv3x3<float>(in, w, bias, out, s);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul<true>)->Name("matmul/openmp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_conv3x3<false>)->Name("conv3x3/serial")->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_conv3x3<true>)->Name("conv3x3/openmp")->Arg(8)->Arg(16)->Arg(32);

BENCHMARK_MAIN();
