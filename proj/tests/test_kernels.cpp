#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rawnext/kernels.hpp"

using namespace rawnext::kernels;

namespace {

std::vector<double> rnd(std::size_t n, std::mt19937_64& rng) { return oracle::random_vector(n, rng); }

ConvGeometry random_conv(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  ConvGeometry g;
  g.groups = pick(1, 4);
  g.batch = pick(1, 3);
  g.in_channels = g.groups * pick(1, 5);
  g.out_channels = g.groups * pick(1, 6);
  g.kernel = pick(0, 1) ? 3 : pick(1, 4);
  g.stride = pick(0, 2) == 0 ? pick(1, 3) : 1;
  g.padding = pick(0, g.kernel - 1);
  g.in_length = g.kernel + pick(0, 40);
  return g;
}

}  // namespace

TEST_CASE("serial conv matches the direct-loop oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = random_conv(rng);
    const auto x = rnd(g.batch * g.in_channels * g.in_length, rng);
    const auto w = rnd(g.out_channels * g.in_per_group() * g.kernel, rng);
    const auto b = rnd(g.out_channels, rng);
    std::vector<double> y(g.batch * g.out_channels * g.out_length());
    serial::conv1d_forward<double>(g, x, w, b, y);
    const auto expect = oracle::conv1d(x, w, b, g.batch, g.in_channels, g.out_channels, g.in_length, g.kernel,
                                       g.stride, g.padding, g.groups);
    REQUIRE(oracle::max_abs_diff(y, expect) < 1e-12);
  }
}

TEST_CASE("conv backward kernels are the adjoints of the forward map") {
  // <conv(x), gy> = <x, conv_T(gy)> and d<conv(x), gy>/dw = backward_weight.
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = random_conv(rng);
    const auto x = rnd(g.batch * g.in_channels * g.in_length, rng);
    const auto w = rnd(g.out_channels * g.in_per_group() * g.kernel, rng);
    const auto gy = rnd(g.batch * g.out_channels * g.out_length(), rng);
    const auto y = oracle::conv1d(x, w, {}, g.batch, g.in_channels, g.out_channels, g.in_length, g.kernel, g.stride,
                                  g.padding, g.groups);
    std::vector<double> gx(x.size(), 0.0), gw(w.size(), 0.0);
    serial::conv1d_backward_input<double>(g, gy, w, gx);
    serial::conv1d_backward_weight<double>(g, x, gy, gw);
    double lhs = 0, rhs_x = 0, rhs_w = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * gy[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs_x += x[i] * gx[i];
    for (std::size_t i = 0; i < w.size(); ++i) rhs_w += w[i] * gw[i];
    CHECK(lhs == doctest::Approx(rhs_x).epsilon(1e-10));
    CHECK(lhs == doctest::Approx(rhs_w).epsilon(1e-10));
  }
}

TEST_CASE("parallel conv kernels agree with the serial reference") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const auto g = random_conv(rng);
    const auto x = rnd(g.batch * g.in_channels * g.in_length, rng);
    const auto w = rnd(g.out_channels * g.in_per_group() * g.kernel, rng);
    const auto b = rnd(g.out_channels, rng);
    const auto gy = rnd(g.batch * g.out_channels * g.out_length(), rng);
    std::vector<double> y1(gy.size()), y2(gy.size());
    // Non-zero starting values exercise the accumulate contract.
    std::vector<double> gx1(x.size(), 0.5), gx2(x.size(), 0.5), gw1(w.size(), 0.25), gw2(w.size(), 0.25);
    serial::conv1d_forward<double>(g, x, w, b, y1);
    parallel::conv1d_forward<double>(g, x, w, b, y2);
    serial::conv1d_backward_input<double>(g, gy, w, gx1);
    parallel::conv1d_backward_input<double>(g, gy, w, gx2);
    serial::conv1d_backward_weight<double>(g, x, gy, gw1);
    parallel::conv1d_backward_weight<double>(g, x, gy, gw2);
    INFO("groups=" << g.groups << " k=" << g.kernel << " s=" << g.stride << " p=" << g.padding << " L=" << g.in_length);
    REQUIRE(oracle::max_abs_diff(y1, y2) < 1e-11);
    REQUIRE(oracle::max_abs_diff(gx1, gx2) < 1e-11);
    REQUIRE(oracle::max_abs_diff(gw1, gw2) < 1e-11);
  }
}

TEST_CASE("parallel conv in float stays close to the serial reference on long inputs") {
  std::mt19937_64 rng(14);
  ConvGeometry g;
  g.batch = 2, g.in_channels = 64, g.out_channels = 64, g.in_length = 2187, g.kernel = 3, g.padding = 1, g.groups = 16;
  std::vector<float> x(g.batch * g.in_channels * g.in_length), w(g.out_channels * g.in_per_group() * 3), b;
  std::normal_distribution<float> nd;
  for (auto& v : x) v = nd(rng);
  for (auto& v : w) v = nd(rng);
  std::vector<float> y1(g.batch * g.out_channels * g.out_length()), y2(y1.size());
  serial::conv1d_forward<float>(g, x, w, b, y1);
  parallel::conv1d_forward<float>(g, x, w, b, y2);
  double worst = 0;
  for (std::size_t i = 0; i < y1.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(y1[i] - y2[i])));
  CHECK(worst < 1e-4);
}

TEST_CASE("pooling kernels match windowed oracles, serial and parallel") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    PoolGeometry g;
    g.batch = 1 + trial % 3;
    g.channels = 1 + trial % 4;
    g.kernel = 1 + trial % 4;
    g.stride = 1 + (trial / 4) % 3;
    g.in_length = g.kernel + static_cast<std::size_t>(trial);
    const std::size_t rows = g.batch * g.channels;
    const auto x = rnd(rows * g.in_length, rng);
    const auto gy = rnd(rows * g.out_length(), rng);
    for (bool par : {false, true}) {
      std::vector<double> ya(gy.size()), ym(gy.size());
      std::vector<std::size_t> arg(gy.size());
      (par ? parallel::avgpool1d_forward<double> : serial::avgpool1d_forward<double>)(g, x, ya);
      (par ? parallel::maxpool1d_forward<double> : serial::maxpool1d_forward<double>)(g, x, ym, arg);
      CHECK(oracle::max_abs_diff(ya, oracle::pool(x, rows, g.in_length, g.kernel, g.stride, false)) < 1e-12);
      CHECK(oracle::max_abs_diff(ym, oracle::pool(x, rows, g.in_length, g.kernel, g.stride, true)) == 0.0);

      // Backward: adjoint for the average, routed copy for the max.
      std::vector<double> gxa(x.size(), 0.0), gxm(x.size(), 0.0);
      (par ? parallel::avgpool1d_backward<double> : serial::avgpool1d_backward<double>)(g, gy, gxa);
      (par ? parallel::maxpool1d_backward<double> : serial::maxpool1d_backward<double>)(g, gy, arg, gxm);
      double lhs = 0, rhs = 0;
      for (std::size_t i = 0; i < gy.size(); ++i) lhs += ya[i] * gy[i];
      for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gxa[i];
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
      double lm = 0, rm = 0;
      for (std::size_t i = 0; i < gy.size(); ++i) lm += ym[i] * gy[i];
      for (std::size_t i = 0; i < x.size(); ++i) rm += x[i] * gxm[i];
      CHECK(lm == doctest::Approx(rm).epsilon(1e-10));
    }
  }
}

TEST_CASE("max pooling breaks ties toward the earliest index") {
  PoolGeometry g;
  g.in_length = 6, g.kernel = 3, g.stride = 3;
  const std::vector<double> x{2, 2, 1, 0, 5, 5};
  std::vector<double> y(2), gx(6, 0.0);
  std::vector<std::size_t> arg(2);
  serial::maxpool1d_forward<double>(g, x, y, arg);
  const std::vector<double> gy{1, 1};
  serial::maxpool1d_backward<double>(g, gy, arg, gx);
  CHECK(gx == std::vector<double>{1, 0, 0, 0, 1, 0});
  std::vector<std::size_t> arg2(2);
  parallel::maxpool1d_forward<double>(g, x, y, arg2);
  CHECK(arg2 == arg);
}

TEST_CASE("batch-norm kernels agree between serial and parallel") {
  std::mt19937_64 rng(16);
  NormGeometry g{3, 5, 17};
  const auto x = rnd(g.batch * g.channels * g.length, rng);
  const auto gamma = rnd(g.channels, rng), beta = rnd(g.channels, rng);
  const auto gy = rnd(x.size(), rng);
  std::vector<double> y[2], xh[2], mean[2], var[2], inv[2], gx[2], gg[2], gb[2];
  for (int p = 0; p < 2; ++p) {
    y[p].resize(x.size()), xh[p].resize(x.size()), mean[p].resize(g.channels), var[p].resize(g.channels);
    inv[p].resize(g.channels), gx[p].assign(x.size(), 0.0), gg[p].assign(g.channels, 0.0), gb[p].assign(g.channels, 0.0);
    (p ? parallel::batchnorm_train_forward<double> : serial::batchnorm_train_forward<double>)(
        g, x, gamma, beta, 1e-5, y[p], xh[p], mean[p], var[p], inv[p]);
    (p ? parallel::batchnorm_train_backward<double> : serial::batchnorm_train_backward<double>)(
        g, gy, xh[p], gamma, inv[p], gx[p], gg[p], gb[p]);
  }
  CHECK(oracle::max_abs_diff(y[0], y[1]) < 1e-12);
  CHECK(oracle::max_abs_diff(gx[0], gx[1]) < 1e-12);
  CHECK(oracle::max_abs_diff(gg[0], gg[1]) < 1e-12);
  CHECK(oracle::max_abs_diff(gb[0], gb[1]) < 1e-12);
}
