// OpenMP kernels against the serial reference versions.
//   ./bench_kernels --benchmark_filter=Conv
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "saf/gemm.hpp"
#include "saf/kernels.hpp"
#include "saf/reference.hpp"

namespace {

using saf::Shape;
using saf::Tensor;

Tensor<float> uniform(Shape shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = u(gen);
  return t;
}

void BM_GemmParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  Tensor<float> c({n, n});
  for (auto _ : state) {
    saf::gemm(saf::Transpose::No, saf::Transpose::No, n, n, n, a.data().data(), b.data().data(), c.data().data());
    benchmark::DoNotOptimize(c.data().data());
  }
  state.counters["threads"] = omp_get_max_threads();
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  Tensor<float> c({n, n});
  for (auto _ : state) {
    saf::reference::gemm(n, n, n, a.data().data(), b.data().data(), c.data().data());
    benchmark::DoNotOptimize(c.data().data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

// LeNet-5 second convolution on a batch of 100 MNIST feature maps.
struct ConvCase {
  Tensor<float> input = uniform({100, 6, 12, 12}, 3);
  Tensor<float> weights = uniform({16, 6, 5, 5}, 4);
  Tensor<float> bias = uniform({16}, 5);
};

void BM_ConvForwardParallel(benchmark::State& state) {
  ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(saf::conv2d_forward(c.input, c.weights, c.bias, 1, 0));
  state.counters["threads"] = omp_get_max_threads();
  state.SetItemsProcessed(state.iterations() * 100);
}

void BM_ConvForwardReference(benchmark::State& state) {
  ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(saf::reference::conv2d_forward(c.input, c.weights, c.bias, 1, 0));
  state.SetItemsProcessed(state.iterations() * 100);
}

void BM_ConvBackwardParallel(benchmark::State& state) {
  ConvCase c;
  const auto up = uniform({100, 16, 8, 8}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(saf::conv2d_backward(c.input, c.weights, up, 1, 0));
  state.counters["threads"] = omp_get_max_threads();
  state.SetItemsProcessed(state.iterations() * 100);
}

void BM_ConvBackwardReference(benchmark::State& state) {
  ConvCase c;
  const auto up = uniform({100, 16, 8, 8}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(saf::reference::conv2d_backward(c.input, c.weights, up, 1, 0));
  state.SetItemsProcessed(state.iterations() * 100);
}

void BM_MaxPoolParallel(benchmark::State& state) {
  const auto x = uniform({100, 16, 24, 24}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(saf::maxpool_forward(x, 2, 2));
}

void BM_MaxPoolReference(benchmark::State& state) {
  const auto x = uniform({100, 16, 24, 24}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(saf::reference::maxpool_forward(x, 2, 2));
}

}  // namespace

BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPoolParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPoolReference)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
