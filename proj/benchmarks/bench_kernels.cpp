#include <benchmark/benchmark.h>

#include "pidi/binary.hpp"
#include "pidi/gemm.hpp"
#include "pidi/ops.hpp"
#include "pidi/pdc.hpp"

namespace {

using namespace pidi;

void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = random_uniform<float>({n, n}, -1, 1, rng), b = random_uniform<float>({n, n}, -1, 1, rng);
  Tensor c({n, n});
  for (auto _ : state) {
    gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

// Channels × spatial side of a 3×3 same-padded layer.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 64})->Args({64, 32})->Args({128, 16})->Unit(benchmark::kMicrosecond);
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  std::mt19937_64 rng(2);
  const Tensor x = random_uniform<float>({1, c, s, s}, -1, 1, rng);
  const Tensor w = random_uniform<float>({c, c, 3, 3}, -1, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, ConvSpec{3, 1, 1, 1, 1}));
}
BENCHMARK(BM_Conv3x3)->Apply(conv_args);

void BM_PdcPairs(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  std::mt19937_64 rng(3);
  const auto pattern = pdc::probe_pattern(pdc::Kind::cpdc);
  const Tensor x = random_uniform<float>({1, c, s, s}, -1, 1, rng);
  const Tensor w = random_uniform<float>({c, c, 8, 1}, -1, 1, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pdc::pdc_forward_pairs(x, w, pattern, ConvSpec{3, 1, 1, 1, 1}));
  }
}
BENCHMARK(BM_PdcPairs)->Apply(conv_args);

void BM_PdcReparam(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  std::mt19937_64 rng(3);
  const auto pattern = pdc::probe_pattern(pdc::Kind::cpdc);
  const Tensor x = random_uniform<float>({1, c, s, s}, -1, 1, rng);
  const Tensor k = pdc::reparameterize(random_uniform<float>({c, c, 8, 1}, -1, 1, rng), pattern);
  for (auto _ : state) benchmark::DoNotOptimize(pdc::pdc_forward_reparam(x, k, ConvSpec{3, 1, 1, 1, 1}));
}
BENCHMARK(BM_PdcReparam)->Apply(conv_args);

void BM_BConvPacked(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  std::mt19937_64 rng(4);
  const auto xb = bnn::BitTensor::pack(random_uniform<float>({1, c, s, s}, -1, 1, rng));
  const auto wb = bnn::BitTensor::pack(random_uniform<float>({c, c, 3, 3}, -1, 1, rng));
  bnn::BinaryConvSpec spec;
  spec.conv = ConvSpec{3, 1, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(bnn::bconv(xb, wb, spec));
}
BENCHMARK(BM_BConvPacked)->Apply(conv_args);

void BM_BConvFloat(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  std::mt19937_64 rng(4);
  const Tensor x = random_uniform<float>({1, c, s, s}, -1, 1, rng);
  const Tensor w = random_uniform<float>({c, c, 3, 3}, -1, 1, rng);
  bnn::BinaryConvSpec spec;
  spec.conv = ConvSpec{3, 1, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(bnn::bconv_float(x, w, spec));
}
BENCHMARK(BM_BConvFloat)->Apply(conv_args);

void BM_BiPdcPacked(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  std::mt19937_64 rng(5);
  const auto pattern = pdc::probe_pattern(pdc::Kind::cpdc);
  const Tensor x = random_uniform<float>({1, c, s, s}, -1, 1, rng);
  const auto wb = bnn::BitTensor::pack(random_uniform<float>({c, c * 8, 1, 1}, -1, 1, rng));
  bnn::BinaryConvSpec spec;
  spec.conv = ConvSpec{3, 1, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(bnn::bipdc(x, wb, pattern, spec));
}
BENCHMARK(BM_BiPdcPacked)->Apply(conv_args);

}  // namespace

BENCHMARK_MAIN();
