#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "rawnext/model.hpp"

using namespace rawnext;

namespace {

Tensor<double> randn(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

void fill(Tensor<double> t, double value) {
  for (auto& v : t.mutable_values()) v = value;
}

// Time positions of `x` that influence output element `index` of f(x).
std::set<std::size_t> dependency(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                 const Tensor<double>& x, std::size_t index) {
  auto in = x.detach();
  in.set_requires_grad(true);
  auto y = f(in);
  std::vector<double> mask(y.numel(), 0.0);
  mask[index] = 1.0;
  backward(ops::sum_all(ops::mul(y, Tensor<double>::from(y.shape(), mask))));
  std::set<std::size_t> frames;
  const std::size_t len = in.dim(2);
  for (std::size_t i = 0; i < in.numel(); ++i)
    if (in.grad()[i] != 0.0) frames.insert(i % len);
  return frames;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.cardinality() == 32);
  CHECK(c.total_downsampling() == 2187);
  CHECK(c.total_blocks() == 12);
  c.low_paths = 4;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.stage_widths = {256, 250, 512, 512};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_model_mode("baseline") == ModelMode::baseline);
  CHECK_THROWS_AS(parse_model_mode("resnet"), std::invalid_argument);
}

TEST_CASE("full-size shapes follow the architecture table") {
  RawNextModel<float> model(ModelConfig{}, 1);
  ForwardTrace<float> trace;
  auto y = model.forward(Tensor<float>::zeros({1, 59049}), &trace);
  CHECK(trace.frontend == Shape{1, 128, 2187});
  REQUIRE(trace.stages.size() == 4);
  CHECK(trace.stages[0] == Shape{1, 256, 729});
  CHECK(trace.stages[1] == Shape{1, 256, 243});
  CHECK(trace.stages[2] == Shape{1, 512, 81});
  CHECK(trace.stages[3] == Shape{1, 512, 27});
  CHECK(trace.pooled == Shape{1, 1024});
  CHECK(y.shape() == Shape{1, 512});
}

TEST_CASE("front end length algebra") {
  ModelConfig c = ModelConfig::desk();
  RawNextModel<float> model(c, 1);
  CHECK(model.frontend_forward(Tensor<float>::zeros({1, 177147})).dim(2) == 6561);
  // 20000 -> conv s3: 6666 -> pool: 2222 -> pool: 740.
  CHECK(frontend_frames(20000) == 740);
  CHECK(model.frontend_forward(Tensor<float>::zeros({1, 20000})).dim(2) == 740);
  CHECK_THROWS_WITH_AS(model.forward(Tensor<float>::zeros({1, 2186})), doctest::Contains("2187"), ShapeError);
  CHECK(model.forward(Tensor<float>::zeros({2, 2187})).shape() == Shape{2, c.embedding_dim});
  CHECK(model.forward(Tensor<float>::zeros({1, 1, 16000})).shape() == Shape{1, c.embedding_dim});
}

TEST_CASE("gate: symmetric logits average the branches") {
  std::mt19937_64 rng(1);
  ParameterSet<double> params;
  Initializer init(1);
  BranchGate<double> gate(params, init, "g", 8, 4);
  for (const auto& [name, p] : params.parameters()) fill(p, 0.0);
  auto l = randn({2, 8, 5}, rng), o = randn({2, 8, 5}, rng), h = randn({2, 8, 5}, rng);
  BlockTap<double> tap;
  auto y = gate.forward(l, o, h, &tap);
  for (double a : tap.attention.values()) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == doctest::Approx((l.at(i) + o.at(i) + h.at(i)) / 3.0).epsilon(1e-12));
}

TEST_CASE("gate: a dominant branch saturates the softmax") {
  // Y = I, Z = 100 I: the only branch with positive summaries wins.
  ParameterSet<double> params;
  Initializer init(1);
  const std::size_t C = 4, T = 6;
  BranchGate<double> gate(params, init, "g", C, C);
  for (const auto& [name, p] : params.parameters()) fill(p, 0.0);
  for (std::size_t i = 0; i < C; ++i) {
    gate.hidden.weight.mutable_values()[i * C + i] = 1.0;
    gate.output.weight.mutable_values()[i * C + i] = 100.0;
  }
  std::mt19937_64 rng(2);
  auto o = ops::add(randn({1, C, T}, rng, 0.1), Tensor<double>::full({1, C, 1}, 1.0));
  auto l = ops::sub(randn({1, C, T}, rng, 0.1), Tensor<double>::full({1, C, 1}, 1.0));
  auto h = ops::sub(randn({1, C, T}, rng, 0.1), Tensor<double>::full({1, C, 1}, 1.0));
  auto y = gate.forward(l, o, h);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(o.at(i)).epsilon(1e-6));
}

TEST_CASE("gate: mixing matches a per-element oracle") {
  std::mt19937_64 rng(3);
  ParameterSet<double> params;
  Initializer init(7);
  const std::size_t C = 8, T = 4, Hd = 5;
  BranchGate<double> gate(params, init, "g", C, Hd);
  for (const auto& [name, p] : params.parameters()) {
    Tensor<double> h = p;
    for (auto& v : h.mutable_values()) v = std::normal_distribution<double>()(rng);
  }
  std::array<Tensor<double>, 3> maps{randn({1, C, T}, rng), randn({1, C, T}, rng), randn({1, C, T}, rng)};
  auto y = gate.forward(maps[0], maps[1], maps[2]);

  // H_b = time mean; W_b = Z relu(Y H_b + p) + q; A = softmax over b.
  auto Y = gate.hidden.weight.values(), p = gate.hidden.bias.values();
  auto Z = gate.output.weight.values(), q = gate.output.bias.values();
  std::array<std::vector<double>, 3> W;
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> H(C), hid(Hd);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) H[c] += maps[b].at(c * T + t) / T;
    }
    for (std::size_t j = 0; j < Hd; ++j) {
      double acc = p[j];
      for (std::size_t c = 0; c < C; ++c) acc += Y[j * C + c] * H[c];
      hid[j] = std::max(acc, 0.0);
    }
    W[b].resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = q[c];
      for (std::size_t j = 0; j < Hd; ++j) acc += Z[c * Hd + j] * hid[j];
      W[b][c] = acc;
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    const double m = std::max({W[0][c], W[1][c], W[2][c]});
    double e[3], s = 0;
    for (int b = 0; b < 3; ++b) s += e[b] = std::exp(W[b][c] - m);
    for (std::size_t t = 0; t < T; ++t) {
      double expect = 0;
      for (int b = 0; b < 3; ++b) expect += maps[b].at(c * T + t) * e[b] / s;
      CHECK(y.at(c * T + t) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(gate.forward(maps[0], randn({1, C, T + 1}, rng), maps[2]), ShapeError);
}

TEST_CASE("branch receptive fields on the block input grid are 3, 9 and 1") {
  ModelConfig c;
  CHECK(branch_receptive_field(c, Branch::original) == Rational{3, 1});
  CHECK(branch_receptive_field(c, Branch::low) == Rational{9, 1});
  CHECK(branch_receptive_field(c, Branch::high) == Rational{1, 1});

  // Empirical check through the actual layers: dependency span of one
  // interior output of each branch convolution (pre-ReLU, so nothing is
  // masked).
  ModelConfig small = ModelConfig::tiny();
  ParameterSet<double> params;
  Initializer init(5);
  ResidualBlock<double> block(params, init, "b", 32, small, 32);
  std::mt19937_64 rng(4);
  const auto x = randn({1, 32, 27}, rng);
  const auto eval = ops::NormMode::eval;
  const std::size_t mid = 4;  // interior frame of a 9-frame (pooled) or 27-frame grid
  auto orig = dependency([&](const Tensor<double>& in) { return block.original.forward(in, eval, false); }, x, 13);
  auto low = dependency(
      [&](const Tensor<double>& in) { return block.low.forward(ops::avg_pool1d(in, 3, 3), eval, false); }, x, mid);
  // The high-branch conv runs on the 3x upsampled grid: 3 taps there span
  // 3 / 3 = 1 input frame.
  const auto up = randn({1, 32, 81}, rng);
  auto high = dependency([&](const Tensor<double>& in) { return block.high.forward(in, eval, false); }, up, 40);
  CHECK(orig.size() == 3);
  CHECK(low.size() == 9);
  CHECK(high.size() == 3);
}

TEST_CASE("zeroed branches reduce a block to BN + ReLU of the residual") {
  ModelConfig c = ModelConfig::tiny();
  ParameterSet<double> params;
  Initializer init(6);
  ResidualBlock<double> block(params, init, "b", 32, c, 32);
  for (const auto& [name, p] : params.parameters()) {
    const bool keep = name.find("out_bn") != std::string::npos || name.find(".gamma") != std::string::npos ||
                      name.find(".beta") != std::string::npos;
    if (!keep) fill(p, 0.0);
  }
  std::mt19937_64 rng(7);
  auto x = randn({2, 32, 12}, rng);
  auto y = block.forward(x, ops::NormMode::eval);
  // Eval BN with mean 0, var 1, gamma 1, beta 0.
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == doctest::Approx(std::max(0.0, x.at(i) / std::sqrt(1.0 + 1e-5))).epsilon(1e-12));
}

TEST_CASE("block parameter count matches the layer list") {
  ModelConfig c;
  ParameterSet<double> params;
  Initializer init(8);
  ResidualBlock<double> block(params, init, "b", 256, c, 256);
  const std::size_t C = 256, hidden = std::max<std::size_t>(C / 8, 16);
  const std::size_t bn = 2 * C;
  const std::size_t expect = (C * C + bn)                    // reduce 1x1
                             + (C * (C / 16) * 3 + bn)       // original, 16 groups
                             + 2 * (C * (C / 8) * 3 + bn)    // low and high, 8 groups
                             + 2 * (C * (C / 8) * 3 + C)     // transposed convs with bias
                             + (C * hidden + hidden)         // Y, p
                             + (hidden * C + C)              // Z, q
                             + bn;                           // output BN
  CHECK(params.parameter_count() == expect);

  ParameterSet<double> proj;
  ResidualBlock<double> widen(proj, init, "w", 128, c, 256);
  CHECK(proj.parameter_count() == expect + 128 * C + bn - (C * C - 128 * C));
}

TEST_CASE("aggregation nodes") {
  ParameterSet<double> params;
  Initializer init(9);
  AggregationNode<double> single(params, init, "n1", 4, 4, false, 3);
  fill(single.conv.weight, 0.0);
  for (std::size_t i = 0; i < 4; ++i) single.conv.weight.mutable_values()[i * 4 + i] = 1.0;
  std::mt19937_64 rng(10);
  auto x = randn({1, 4, 9}, rng);
  auto y = single.forward({x}, ops::NormMode::eval);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == doctest::Approx(std::max(0.0, x.at(i) / std::sqrt(1.0 + 1e-5))).epsilon(1e-12));

  AggregationNode<double> pair(params, init, "n2", 8, 3, true, 3);
  auto a = randn({1, 4, 9}, rng), b = randn({1, 4, 9}, rng);
  auto z = pair.forward({a, b}, ops::NormMode::eval);
  CHECK(z.shape() == Shape{1, 3, 3});
  std::vector<double> cat(a.values().begin(), a.values().end());
  cat.insert(cat.end(), b.values().begin(), b.values().end());
  auto w = pair.conv.weight.values();
  auto pre = oracle::conv1d(cat, {w.begin(), w.end()}, {}, 1, 8, 3, 9, 1, 1, 0, 1);
  for (auto& v : pre) v = std::max(0.0, v / std::sqrt(1.0 + 1e-5));
  CHECK(oracle::max_abs_diff({z.values().begin(), z.values().end()}, oracle::pool(pre, 3, 9, 3, 3, true)) < 1e-12);
  CHECK_THROWS_AS(pair.forward({a, randn({1, 4, 8}, rng)}, ops::NormMode::eval), ShapeError);
}

TEST_CASE("attentive statistics pooling") {
  std::mt19937_64 rng(11);
  ParameterSet<double> params;
  Initializer init(12);
  AttentiveStatsPool<double> pool(params, init, "pool", 6, 4);
  auto one = randn({2, 6, 1}, rng);
  auto y = pool.forward(one);
  CHECK(y.shape() == Shape{2, 12});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(y.at(n * 12 + c) == doctest::Approx(one.at(n * 6 + c)).epsilon(1e-12));
      CHECK(y.at(n * 12 + 6 + c) <= 1e-6);
    }

  fill(pool.score_weight, 0.0);
  auto x = randn({1, 6, 10}, rng);
  auto s = pool.forward(x);
  for (std::size_t c = 0; c < 6; ++c) {
    double m = 0, m2 = 0;
    for (std::size_t t = 0; t < 10; ++t) m += x.at(c * 10 + t) / 10, m2 += x.at(c * 10 + t) * x.at(c * 10 + t) / 10;
    CHECK(s.at(c) == doctest::Approx(m).epsilon(1e-12));
    CHECK(s.at(6 + c) == doctest::Approx(std::sqrt(m2 - m * m)).epsilon(1e-9));
  }
}

TEST_CASE("parameter naming") {
  RawNextModel<float> rx(ModelConfig::desk(), 1);
  auto baseline_cfg = ModelConfig::desk();
  baseline_cfg.mode = ModelMode::baseline;
  RawNextModel<float> base(baseline_cfg, 1);
  const auto& names = rx.parameters().parameters();
  CHECK(names.count("stage0.block0.reduce.conv.weight") == 1);
  CHECK(names.count("stage0.block1.gate.output.bias") == 1);
  CHECK(names.count("stage1.node0.conv.weight") == 1);
  CHECK(names.count("stage1.root.conv.weight") == 1);
  CHECK(names.count("stage0.block0.low.upsample.weight") == 1);
  CHECK(rx.parameters().buffers().count("frontend.conv0.bn.running_mean") == 1);
  CHECK(base.parameters().parameters().count("stage0.block0.grouped.conv.weight") == 1);

  // Only block / aggregation names depend on the mode.
  auto outside = [](const ParameterSet<float>& set) {
    std::set<std::string> out;
    for (const auto& [name, t] : set.parameters())
      if (name.rfind("stage", 0) != 0) out.insert(name);
    return out;
  };
  CHECK(outside(rx.parameters()) == outside(base.parameters()));
  CHECK(outside(rx.parameters()).count("embedding.weight") == 1);
  CHECK(outside(rx.parameters()).count("pool.score.weight") == 1);

  // Same seed, same weights.
  RawNextModel<float> again(ModelConfig::desk(), 1);
  for (const auto& [name, t] : names) {
    auto a = t.values();
    auto b = again.parameters().parameters().at(name).values();
    REQUIRE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("baseline mode keeps every stage shape") {
  auto cfg = ModelConfig{};
  cfg.mode = ModelMode::baseline;
  RawNextModel<float> model(cfg, 2);
  ForwardTrace<float> trace;
  model.forward(Tensor<float>::zeros({1, 59049}), &trace);
  CHECK(trace.stages[0] == Shape{1, 256, 729});
  CHECK(trace.stages[3] == Shape{1, 512, 27});
  CHECK_THROWS_WITH_AS(model.activation_tap(Tensor<float>::zeros({1, 59049})),
                       doctest::Contains("no EDSP branches to tap"), std::logic_error);
}

TEST_CASE("activation taps") {
  RawNextModel<float> model(ModelConfig::desk(), 3);
  std::mt19937_64 rng(13);
  std::normal_distribution<float> nd;
  std::vector<float> wave(8000);
  for (auto& v : wave) v = nd(rng);
  const auto x = Tensor<float>::from({1, 8000}, wave);
  const auto taps = model.activation_tap(x);
  REQUIRE(taps.size() == 12);
  for (const auto& tap : taps) {
    for (const auto& g : tap.gated) CHECK(g.shape() == tap.gate_output.shape());
    double worst = 0, worst_sum = 0;
    for (std::size_t i = 0; i < tap.gate_output.numel(); ++i) {
      const double s = double(tap.gated[0].at(i)) + tap.gated[1].at(i) + tap.gated[2].at(i);
      worst = std::max(worst, std::abs(s - tap.gate_output.at(i)));
    }
    const std::size_t cols = tap.attention.numel() / 3;
    for (std::size_t c = 0; c < cols; ++c)
      worst_sum = std::max(worst_sum, std::abs(1.0 - tap.attention.at(c) - tap.attention.at(cols + c) -
                                               tap.attention.at(2 * cols + c)));
    CHECK(worst < 1e-6);
    CHECK(worst_sum < 1e-6);
  }
  model.set_training(true);
  CHECK_THROWS_AS(model.activation_tap(x), std::logic_error);
}
