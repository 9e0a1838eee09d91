// Serial reference vs OpenMP kernels on block-sized float tensors.
// Only 1 thread means the two paths measure loop structure alone;
// set OMP_NUM_THREADS to compare scaling.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rawnext/kernels.hpp"

using namespace rawnext::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Grouped 3-tap conv as in the second stage: 256 channels, cardinality 32.
ConvGeometry block_conv(std::size_t length) {
  ConvGeometry g;
  g.batch = 4, g.in_channels = 256, g.out_channels = 256, g.in_length = length;
  g.kernel = 3, g.padding = 1, g.groups = 32;
  return g;
}

ConvGeometry frontend_conv() {
  ConvGeometry g;
  g.batch = 4, g.in_channels = 1, g.out_channels = 128, g.in_length = 59049;
  g.kernel = 3, g.stride = 3;
  return g;
}

void conv_forward(benchmark::State& state, ConvGeometry g, bool par) {
  const auto x = noise(g.batch * g.in_channels * g.in_length, 1);
  const auto w = noise(g.out_channels * g.in_per_group() * g.kernel, 2);
  const std::vector<float> b(g.out_channels, 0.1f);
  std::vector<float> y(g.batch * g.out_channels * g.out_length());
  for (auto _ : state) {
    if (par) parallel::conv1d_forward<float>(g, x, w, b, y);
    else serial::conv1d_forward<float>(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_backward(benchmark::State& state, ConvGeometry g, bool par) {
  const auto x = noise(g.batch * g.in_channels * g.in_length, 1);
  const auto w = noise(g.out_channels * g.in_per_group() * g.kernel, 2);
  const auto gy = noise(g.batch * g.out_channels * g.out_length(), 3);
  std::vector<float> gx(x.size()), gw(w.size());
  for (auto _ : state) {
    std::fill(gx.begin(), gx.end(), 0.0f);
    std::fill(gw.begin(), gw.end(), 0.0f);
    if (par) {
      parallel::conv1d_backward_input<float>(g, gy, w, gx);
      parallel::conv1d_backward_weight<float>(g, x, gy, gw);
    } else {
      serial::conv1d_backward_input<float>(g, gy, w, gx);
      serial::conv1d_backward_weight<float>(g, x, gy, gw);
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

void maxpool(benchmark::State& state, bool par) {
  PoolGeometry g;
  g.batch = 4, g.channels = 256, g.in_length = 2187, g.kernel = 3, g.stride = 3;
  const auto x = noise(g.batch * g.channels * g.in_length, 4);
  std::vector<float> y(g.batch * g.channels * g.out_length());
  std::vector<std::size_t> arg(y.size());
  for (auto _ : state) {
    if (par) parallel::maxpool1d_forward<float>(g, x, y, arg);
    else serial::maxpool1d_forward<float>(g, x, y, arg);
    benchmark::DoNotOptimize(y.data());
  }
}

void batchnorm(benchmark::State& state, bool par) {
  NormGeometry g{4, 256, 729};
  const auto x = noise(g.batch * g.channels * g.length, 5);
  const std::vector<float> gamma(g.channels, 1.0f), beta(g.channels, 0.0f);
  std::vector<float> y(x.size()), xh(x.size()), mean(g.channels), var(g.channels), inv(g.channels);
  for (auto _ : state) {
    if (par) parallel::batchnorm_train_forward<float>(g, x, gamma, beta, 1e-5f, y, xh, mean, var, inv);
    else serial::batchnorm_train_forward<float>(g, x, gamma, beta, 1e-5f, y, xh, mean, var, inv);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(conv_forward, grouped_729_serial, block_conv(729), false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, grouped_729_parallel, block_conv(729), true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, frontend_serial, frontend_conv(), false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, frontend_parallel, frontend_conv(), true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, grouped_729_serial, block_conv(729), false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, grouped_729_parallel, block_conv(729), true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(maxpool, serial, false)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(maxpool, parallel, true)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(batchnorm, serial, false)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(batchnorm, parallel, true)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
