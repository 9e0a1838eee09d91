#include "rawnext/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rawnext {

namespace {
constexpr std::size_t kFrontendKernel = 3;
constexpr std::size_t kStagePool = 3;
}  // namespace

std::string to_string(ModelMode mode) { return mode == ModelMode::baseline ? "baseline" : "rawnext"; }

ModelMode parse_model_mode(const std::string& text) {
  if (text == "baseline") return ModelMode::baseline;
  if (text == "rawnext") return ModelMode::rawnext;
  throw std::invalid_argument("model mode must be 'baseline' or 'rawnext', got '" + text + "'");
}

std::string to_string(Branch branch) {
  switch (branch) {
    case Branch::low: return "low";
    case Branch::original: return "original";
    case Branch::high: return "high";
  }
  return "?";
}

std::size_t ModelConfig::gate_hidden(std::size_t width) const {
  return std::max(width / gate_hidden_divisor, gate_hidden_min);
}

std::size_t ModelConfig::total_blocks() const {
  return std::accumulate(stage_blocks.begin(), stage_blocks.end(), std::size_t{0});
}

std::size_t ModelConfig::total_downsampling() const {
  // Strided conv + two front-end max pools + one pool per stage.
  std::size_t factor = 1;
  for (std::size_t i = 0; i < 3 + stage_widths.size(); ++i) factor *= 3;
  return factor;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (stage_widths.empty()) fail("at least one stage is required");
  if (stage_widths.size() != stage_blocks.size()) fail("stage_widths and stage_blocks differ in length");
  if (frontend_channels == 0) fail("frontend_channels must be positive");
  if (original_paths == 0 || low_paths == 0 || high_paths == 0) fail("every branch needs at least one path");
  if (cardinality() != 32)
    fail("original + low + high paths must equal 32, got " + std::to_string(cardinality()));
  if (resample_factor < 2) fail("resample_factor must be >= 2");
  if (gate_hidden_divisor == 0 || gate_hidden_min == 0) fail("gate hidden sizing must be positive");
  if (asp_hidden == 0 || embedding_dim == 0) fail("asp_hidden and embedding_dim must be positive");
  for (std::size_t i = 0; i < stage_widths.size(); ++i) {
    const std::size_t w = stage_widths[i];
    const std::string tag = "stage " + std::to_string(i) + " width " + std::to_string(w);
    if (w == 0 || w % cardinality() != 0) fail(tag + " not divisible by cardinality 32");
    if (w % original_paths || w % low_paths || w % high_paths) fail(tag + " not divisible by branch path counts");
    if (stage_blocks[i] == 0) fail("stage " + std::to_string(i) + " has no blocks");
  }
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.frontend_channels = 32;
  c.stage_widths = {32, 32, 64, 64};
  c.asp_hidden = 32;
  c.embedding_dim = 128;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.frontend_channels = 32;
  c.stage_widths = {32, 32, 32, 32};
  c.stage_blocks = {1, 1, 1, 1};
  c.asp_hidden = 8;
  c.embedding_dim = 16;
  return c;
}

Rational branch_receptive_field(const ModelConfig& config, Branch branch) {
  Rational r{kFrontendKernel, 1};
  if (branch == Branch::low) r.num *= config.resample_factor;
  if (branch == Branch::high) r.den *= config.resample_factor;
  const std::size_t g = std::gcd(r.num, r.den);
  return {r.num / g, r.den / g};
}

std::size_t frontend_frames(std::size_t samples) {
  auto step = [](std::size_t len) { return len < 3 ? 0 : (len - 3) / 3 + 1; };
  return step(step(step(samples)));
}

template <typename T>
Tensor<T> Initializer::uniform(Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return Tensor<T>::from(std::move(shape), std::move(values));
}

template <typename T>
BatchNorm<T>::BatchNorm(ParameterSet<T>& params, const std::string& prefix, std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T(1))),
      beta(Tensor<T>::zeros({channels})),
      running_mean(Tensor<T>::zeros({channels})),
      running_var(Tensor<T>::full({channels}, T(1))) {
  params.add_parameter(prefix + ".gamma", gamma, false);
  params.add_parameter(prefix + ".beta", beta, false);
  params.add_buffer(prefix + ".running_mean", running_mean);
  params.add_buffer(prefix + ".running_var", running_var);
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, ops::NormMode mode) const {
  return ops::batch_norm1d(x, gamma, beta, running_mean, running_var, mode);
}

template <typename T>
ConvBn<T>::ConvBn(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in_channels,
                  std::size_t out_channels, std::size_t kernel, std::size_t stride_, std::size_t padding_,
                  std::size_t groups_)
    : stride(stride_), padding(padding_), groups(groups_) {
  weight = init.uniform<T>({out_channels, in_channels / groups, kernel}, in_channels / groups * kernel);
  params.add_parameter(prefix + ".conv.weight", weight, true);
  bn = BatchNorm<T>(params, prefix + ".bn", out_channels);
}

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, ops::NormMode mode, bool relu) const {
  auto y = bn.forward(ops::conv1d(x, weight, Tensor<T>{}, stride, padding, groups), mode);
  return relu ? ops::relu(y) : y;
}

template <typename T>
Linear<T>::Linear(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in,
                  std::size_t out) {
  weight = init.uniform<T>({out, in}, in);
  bias = init.uniform<T>({out}, in);
  params.add_parameter(prefix + ".weight", weight, true);
  params.add_parameter(prefix + ".bias", bias, false);
}

template <typename T>
BranchGate<T>::BranchGate(ParameterSet<T>& params, Initializer& init, const std::string& prefix,
                          std::size_t channels, std::size_t hidden_size)
    : hidden(params, init, prefix + ".hidden", channels, hidden_size),
      output(params, init, prefix + ".output", hidden_size, channels) {}

template <typename T>
Tensor<T> BranchGate<T>::forward(const Tensor<T>& low, const Tensor<T>& original, const Tensor<T>& high,
                                 BlockTap<T>* tap) const {
  if (low.shape() != original.shape() || high.shape() != original.shape())
    throw ShapeError("gate: branch shapes differ: low " + shape_str(low.shape()) + ", original " +
                     shape_str(original.shape()) + ", high " + shape_str(high.shape()));
  if (original.rank() != 3) throw ShapeError("gate: branch maps must be (batch, channels, time)");
  const std::size_t batch = original.dim(0);
  const std::size_t channels = original.dim(1);
  const std::array<const Tensor<T>*, 3> maps{&low, &original, &high};

  // Time means stacked branch-major: rows [low batch, original batch, high batch].
  std::vector<Tensor<T>> summaries;
  for (const auto* m : maps) summaries.push_back(ops::reshape(ops::mean(*m, 2), {batch, channels}));
  auto logits = output.forward(ops::relu(hidden.forward(ops::concat(summaries, 0))));
  auto attention = ops::softmax(ops::reshape(logits, {3, batch, channels}), 0);

  std::array<Tensor<T>, 3> gated;
  for (std::size_t b = 0; b < 3; ++b) {
    auto weights = ops::reshape(ops::narrow(attention, 0, b, 1), {batch, channels, 1});
    gated[b] = ops::mul(*maps[b], weights);
  }
  auto mixed = ops::add(ops::add(gated[0], gated[1]), gated[2]);
  if (tap) {
    tap->gated = gated;
    tap->attention = attention;
    tap->gate_output = mixed;
  }
  return mixed;
}

template <typename T>
ResidualBlock<T>::ResidualBlock(ParameterSet<T>& params, Initializer& init, const std::string& prefix,
                                std::size_t in_ch, const ModelConfig& config, std::size_t width_)
    : mode(config.mode), in_channels(in_ch), width(width_), factor(config.resample_factor) {
  reduce = ConvBn<T>(params, init, prefix + ".reduce", in_ch, width, 1, 1, 0, 1);
  if (mode == ModelMode::baseline) {
    grouped = ConvBn<T>(params, init, prefix + ".grouped", width, width, 3, 1, 1, config.cardinality());
  } else {
    low_groups = config.low_paths;
    high_groups = config.high_paths;
    original = ConvBn<T>(params, init, prefix + ".original", width, width, 3, 1, 1, config.original_paths);
    low = ConvBn<T>(params, init, prefix + ".low", width, width, 3, 1, 1, low_groups);
    low_up_weight = init.uniform<T>({width, width / low_groups, factor}, width / low_groups * factor);
    low_up_bias = Tensor<T>::zeros({width});
    params.add_parameter(prefix + ".low.upsample.weight", low_up_weight, true);
    params.add_parameter(prefix + ".low.upsample.bias", low_up_bias, false);
    high = ConvBn<T>(params, init, prefix + ".high", width, width, 3, 1, 1, high_groups);
    high_up_weight = init.uniform<T>({width, width / high_groups, factor}, width / high_groups * factor);
    high_up_bias = Tensor<T>::zeros({width});
    params.add_parameter(prefix + ".high.upsample.weight", high_up_weight, true);
    params.add_parameter(prefix + ".high.upsample.bias", high_up_bias, false);
    gate = BranchGate<T>(params, init, prefix + ".gate", width, config.gate_hidden(width));
  }
  if (in_ch != width) projection.emplace(params, init, prefix + ".projection", in_ch, width, 1, 1, 0, 1);
  out_bn = BatchNorm<T>(params, prefix + ".out_bn", width);
}

template <typename T>
Tensor<T> ResidualBlock<T>::low_branch(const Tensor<T>& reduced, ops::NormMode norm) const {
  const std::size_t frames = reduced.dim(2);
  const std::size_t pad = (factor - frames % factor) % factor;
  auto padded = ops::pad_left_edge(reduced, pad);
  auto down = ops::avg_pool1d(padded, factor, factor);
  auto conv = low.forward(down, norm);
  auto up = ops::conv1d_transposed(conv, low_up_weight, low_up_bias, factor, low_groups);
  return pad == 0 ? up : ops::narrow(up, 2, pad, frames);
}

template <typename T>
Tensor<T> ResidualBlock<T>::original_branch(const Tensor<T>& reduced, ops::NormMode norm) const {
  return original.forward(reduced, norm);
}

template <typename T>
Tensor<T> ResidualBlock<T>::high_branch(const Tensor<T>& reduced, ops::NormMode norm) const {
  auto up = ops::conv1d_transposed(reduced, high_up_weight, high_up_bias, factor, high_groups);
  auto conv = high.forward(up, norm);
  return ops::avg_pool1d(conv, factor, factor);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, ops::NormMode norm, BlockTap<T>* tap) const {
  if (x.rank() != 3 || x.dim(1) != in_channels)
    throw ShapeError("block expects " + std::to_string(in_channels) + " input channels, got " + shape_str(x.shape()));
  auto reduced = reduce.forward(x, norm);
  Tensor<T> branch;
  if (mode == ModelMode::baseline) {
    branch = grouped.forward(reduced, norm);
  } else {
    branch = gate.forward(low_branch(reduced, norm), original_branch(reduced, norm), high_branch(reduced, norm), tap);
  }
  auto residual = projection ? projection->forward(x, norm, false) : x;
  return ops::relu(out_bn.forward(ops::add(branch, residual), norm));
}

template <typename T>
AggregationNode<T>::AggregationNode(ParameterSet<T>& params, Initializer& init, const std::string& prefix,
                                    std::size_t in_channels, std::size_t out_channels, bool maxpool,
                                    std::size_t pool_)
    : conv(params, init, prefix, in_channels, out_channels, 1, 1, 0, 1), apply_maxpool(maxpool), pool(pool_) {}

template <typename T>
Tensor<T> AggregationNode<T>::forward(const std::vector<Tensor<T>>& inputs, ops::NormMode norm) const {
  if (inputs.empty()) throw ShapeError("aggregation node: no inputs");
  for (const auto& in : inputs)
    if (in.rank() != 3 || in.dim(2) != inputs.front().dim(2))
      throw ShapeError("aggregation node: inputs differ in frame count (" + shape_str(in.shape()) + " vs " +
                       shape_str(inputs.front().shape()) + ")");
  auto y = conv.forward(inputs.size() == 1 ? inputs.front() : ops::concat(inputs, 1), norm);
  return apply_maxpool ? ops::max_pool1d(y, pool, pool) : y;
}

template <typename T>
Stage<T>::Stage(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in_channels,
                const ModelConfig& config, std::size_t index)
    : mode(config.mode), pool(kStagePool) {
  const std::size_t width = config.stage_widths.at(index);
  const std::size_t n_blocks = config.stage_blocks.at(index);
  for (std::size_t b = 0; b < n_blocks; ++b)
    blocks.emplace_back(params, init, prefix + ".block" + std::to_string(b), b == 0 ? in_channels : width, config,
                        width);
  if (mode == ModelMode::baseline) return;

  const std::size_t n_groups = (n_blocks + 1) / 2;
  for (std::size_t g = 0; g + 1 < n_groups; ++g)
    inner.emplace_back(params, init, prefix + ".node" + std::to_string(g), 2 * width, width, false, pool);
  const std::size_t last_group = n_blocks - 2 * (n_groups - 1);
  const std::size_t root_in = in_channels + inner.size() * width + last_group * width;
  root.emplace(params, init, prefix + ".root", root_in, width, true, pool);
}

template <typename T>
Tensor<T> Stage<T>::forward(const Tensor<T>& x, ops::NormMode norm, std::vector<BlockTap<T>>* taps) const {
  auto run_block = [&](std::size_t b, const Tensor<T>& in) {
    if (!taps) return blocks[b].forward(in, norm);
    BlockTap<T> tap;
    auto out = blocks[b].forward(in, norm, &tap);
    taps->push_back(std::move(tap));
    return out;
  };

  if (mode == ModelMode::baseline) {
    Tensor<T> cur = x;
    for (std::size_t b = 0; b < blocks.size(); ++b) cur = run_block(b, cur);
    return ops::max_pool1d(cur, pool, pool);
  }

  std::vector<Tensor<T>> collected{x};
  Tensor<T> cur = x;
  std::size_t b = 0;
  for (std::size_t g = 0; g <= inner.size(); ++g) {
    std::vector<Tensor<T>> group;
    const std::size_t end = g < inner.size() ? b + 2 : blocks.size();
    for (; b < end; ++b) {
      cur = run_block(b, cur);
      group.push_back(cur);
    }
    if (g < inner.size()) {
      cur = inner[g].forward(group, norm);
      collected.push_back(cur);
    } else {
      collected.insert(collected.end(), group.begin(), group.end());
    }
  }
  return root->forward(collected, norm);
}

template <typename T>
AttentiveStatsPool<T>::AttentiveStatsPool(ParameterSet<T>& params, Initializer& init, const std::string& prefix,
                                          std::size_t channels, std::size_t hidden) {
  attention_weight = init.uniform<T>({hidden, channels, 1}, channels);
  attention_bias = init.uniform<T>({hidden}, channels);
  score_weight = init.uniform<T>({1, hidden, 1}, hidden);
  params.add_parameter(prefix + ".attention.weight", attention_weight, true);
  params.add_parameter(prefix + ".attention.bias", attention_bias, false);
  params.add_parameter(prefix + ".score.weight", score_weight, true);
}

template <typename T>
Tensor<T> AttentiveStatsPool<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 3) throw ShapeError("attentive pooling expects (batch, channels, time), got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  auto hidden = ops::tanh(ops::conv1d(x, attention_weight, attention_bias, 1, 0));
  auto scores = ops::conv1d(hidden, score_weight, Tensor<T>{}, 1, 0);
  auto alpha = ops::softmax(scores, 2);
  auto mu = ops::sum(ops::mul(x, alpha), 2);
  auto second = ops::sum(ops::mul(ops::mul(x, x), alpha), 2);
  auto sigma = ops::sqrt(ops::clamp_min(ops::sub(second, ops::mul(mu, mu)), T(1e-12)));
  return ops::reshape(ops::concat(std::vector<Tensor<T>>{mu, sigma}, 1), {batch, 2 * channels});
}

template <typename T>
RawNextModel<T>::RawNextModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Initializer init(seed);
  const std::size_t f = config_.frontend_channels;
  frontend_[0] = ConvBn<T>(params_, init, "frontend.conv0", 1, f, kFrontendKernel, 3, 0, 1);
  frontend_[1] = ConvBn<T>(params_, init, "frontend.conv1", f, f, kFrontendKernel, 1, 1, 1);
  frontend_[2] = ConvBn<T>(params_, init, "frontend.conv2", f, f, kFrontendKernel, 1, 1, 1);
  std::size_t channels = f;
  for (std::size_t s = 0; s < config_.stage_widths.size(); ++s) {
    stages_.emplace_back(params_, init, "stage" + std::to_string(s), channels, config_, s);
    channels = config_.stage_widths[s];
  }
  pool_ = AttentiveStatsPool<T>(params_, init, "pool", channels, config_.asp_hidden);
  embedding_ = Linear<T>(params_, init, "embedding", 2 * channels, config_.embedding_dim);
}

template <typename T>
Tensor<T> RawNextModel<T>::frontend_forward(const Tensor<T>& waveforms) const {
  Tensor<T> x = waveforms;
  if (x.rank() == 2) x = ops::reshape(x, {x.dim(0), 1, x.dim(1)});
  if (x.rank() != 3 || x.dim(1) != 1)
    throw ShapeError("waveforms must be (batch, samples) or (batch, 1, samples), got " + shape_str(x.shape()));
  if (x.dim(2) < config_.min_samples())
    throw ShapeError("input of " + std::to_string(x.dim(2)) + " samples is shorter than the minimum length of " +
                     std::to_string(config_.min_samples()) + " samples");
  const auto norm = norm_mode();
  auto h = frontend_[0].forward(x, norm);
  h = ops::max_pool1d(frontend_[1].forward(h, norm), 3, 3);
  return ops::max_pool1d(frontend_[2].forward(h, norm), 3, 3);
}

template <typename T>
Tensor<T> RawNextModel<T>::forward(const Tensor<T>& waveforms, ForwardTrace<T>* trace) const {
  auto h = frontend_forward(waveforms);
  if (trace) trace->frontend = h.shape();
  std::vector<BlockTap<T>>* taps = (trace && trace->record_taps && config_.mode == ModelMode::rawnext)
                                       ? &trace->taps
                                       : nullptr;
  for (const auto& stage : stages_) {
    h = stage.forward(h, norm_mode(), taps);
    if (trace) trace->stages.push_back(h.shape());
  }
  auto pooled = pool_.forward(h);
  auto embedding = embedding_.forward(pooled);
  if (trace) {
    trace->pooled = pooled.shape();
    trace->embedding = embedding.shape();
  }
  return embedding;
}

template <typename T>
std::vector<BlockTap<T>> RawNextModel<T>::activation_tap(const Tensor<T>& waveforms) const {
  if (config_.mode != ModelMode::rawnext) throw std::logic_error("no EDSP branches to tap (baseline model)");
  if (training_) throw std::logic_error("activation_tap requires eval mode");
  NoGradGuard no_grad;
  ForwardTrace<T> trace;
  trace.record_taps = true;
  forward(waveforms, &trace);
  return std::move(trace.taps);
}

#define RAWNEXT_MODEL_INSTANTIATE(T)                                                       \
  template Tensor<T> Initializer::uniform<T>(Shape, std::size_t);                         \
  template class BatchNorm<T>;                                                            \
  template class ConvBn<T>;                                                               \
  template class Linear<T>;                                                               \
  template class BranchGate<T>;                                                           \
  template class ResidualBlock<T>;                                                        \
  template class AggregationNode<T>;                                                      \
  template class Stage<T>;                                                                \
  template class AttentiveStatsPool<T>;                                                   \
  template class RawNextModel<T>;

RAWNEXT_MODEL_INSTANTIATE(float)
RAWNEXT_MODEL_INSTANTIATE(double)

}  // namespace rawnext
