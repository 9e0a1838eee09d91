#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rawnext/ops.hpp"
#include "rawnext/tensor.hpp"

namespace rawnext {

enum class ModelMode { baseline, rawnext };

std::string to_string(ModelMode mode);
ModelMode parse_model_mode(const std::string& text);

/// Network topology. Defaults reproduce the full-size architecture
/// (59,049-sample input -> 27 x 512 after the last stage).
struct ModelConfig {
  ModelMode mode = ModelMode::rawnext;
  std::size_t frontend_channels = 128;
  std::vector<std::size_t> stage_widths{256, 256, 512, 512};
  std::vector<std::size_t> stage_blocks{2, 4, 4, 2};
  // Path split of the 32-way cardinality across resolution branches.
  std::size_t original_paths = 16;
  std::size_t low_paths = 8;
  std::size_t high_paths = 8;
  std::size_t resample_factor = 3;
  std::size_t gate_hidden_divisor = 8;
  std::size_t gate_hidden_min = 16;
  std::size_t asp_hidden = 128;
  std::size_t embedding_dim = 512;

  std::size_t cardinality() const { return original_paths + low_paths + high_paths; }
  std::size_t gate_hidden(std::size_t width) const;
  std::size_t total_blocks() const;
  /// Product of every temporal stride in the pipeline (3^7 for four stages).
  std::size_t total_downsampling() const;
  /// Shortest waveform that leaves one frame after the last stage.
  std::size_t min_samples() const { return total_downsampling(); }

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  /// Reduced widths for CPU-scale training runs; topology unchanged.
  static ModelConfig desk();
  /// Smallest legal network (widths 32, one block per stage).
  static ModelConfig tiny();
};

enum class Branch : std::size_t { low = 0, original = 1, high = 2 };
inline constexpr std::array<Branch, 3> kBranches{Branch::low, Branch::original, Branch::high};
std::string to_string(Branch branch);

struct Rational {
  std::size_t num = 0;
  std::size_t den = 1;
  bool operator==(const Rational&) const = default;
};

/// Receptive field of a branch's grouped convolution measured on the block
/// input grid: kernel * (input frames per branch frame), reduced.
Rational branch_receptive_field(const ModelConfig& config, Branch branch);

/// Gated branch activations of one block, F^r(x) * A_r, plus the gate output
/// and attention map (3, batch, channels).
template <typename T>
struct BlockTap {
  std::array<Tensor<T>, 3> gated;
  Tensor<T> attention;
  Tensor<T> gate_output;
};

template <typename T>
struct ForwardTrace {
  Shape frontend;
  std::vector<Shape> stages;
  Shape pooled;
  Shape embedding;
  /// Filled only when `record_taps` is set (rawnext mode).
  bool record_taps = false;
  std::vector<BlockTap<T>> taps;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation in registration order.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  template <typename T>
  Tensor<T> uniform(Shape shape, std::size_t fan_in);

 private:
  std::mt19937_64 rng_;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterSet<T>& params, const std::string& prefix, std::size_t channels);
  Tensor<T> forward(const Tensor<T>& x, ops::NormMode mode) const;

  Tensor<T> gamma, beta, running_mean, running_var;
};

/// Convolution without bias followed by batch norm and optional ReLU.
template <typename T>
class ConvBn {
 public:
  ConvBn() = default;
  ConvBn(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in_channels,
         std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t groups);
  Tensor<T> forward(const Tensor<T>& x, ops::NormMode mode, bool relu = true) const;

  Tensor<T> weight;
  BatchNorm<T> bn;
  std::size_t stride = 1, padding = 0, groups = 1;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in, std::size_t out);
  Tensor<T> forward(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }

  Tensor<T> weight, bias;
};

/// Per-channel softmax attention over the three resolution branches.
template <typename T>
class BranchGate {
 public:
  BranchGate() = default;
  BranchGate(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t channels,
             std::size_t hidden);
  /// Mixes the three (batch, C, T) maps; optionally reports taps.
  Tensor<T> forward(const Tensor<T>& low, const Tensor<T>& original, const Tensor<T>& high,
                    BlockTap<T>* tap = nullptr) const;

  Linear<T> hidden;  // Y, p
  Linear<T> output;  // Z, q
};

/// One residual block. rawnext mode: reduce -> {low, original, high}
/// branches -> gate -> + residual -> BN + ReLU. baseline mode: reduce ->
/// grouped conv (full cardinality) -> + residual -> BN + ReLU.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in_channels,
                const ModelConfig& config, std::size_t width);
  Tensor<T> forward(const Tensor<T>& x, ops::NormMode mode, BlockTap<T>* tap = nullptr) const;

  /// Individual branch maps F^r(x) for an already reduced input.
  Tensor<T> low_branch(const Tensor<T>& reduced, ops::NormMode mode) const;
  Tensor<T> original_branch(const Tensor<T>& reduced, ops::NormMode mode) const;
  Tensor<T> high_branch(const Tensor<T>& reduced, ops::NormMode mode) const;

  ModelMode mode = ModelMode::rawnext;
  std::size_t in_channels = 0, width = 0, factor = 3;
  ConvBn<T> reduce;
  std::optional<ConvBn<T>> projection;
  ConvBn<T> grouped;  // baseline
  ConvBn<T> original, low, high;
  Tensor<T> low_up_weight, low_up_bias, high_up_weight, high_up_bias;
  std::size_t low_groups = 0, high_groups = 0;
  BranchGate<T> gate;
  BatchNorm<T> out_bn;
};

/// Channel concat -> 1x1 conv -> BN + ReLU, optionally followed by max pooling.
template <typename T>
class AggregationNode {
 public:
  AggregationNode() = default;
  AggregationNode(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in_channels,
                  std::size_t out_channels, bool apply_maxpool, std::size_t pool);
  Tensor<T> forward(const std::vector<Tensor<T>>& inputs, ops::NormMode mode) const;

  ConvBn<T> conv;
  bool apply_maxpool = false;
  std::size_t pool = 3;
};

/// A stage of blocks. rawnext mode wires blocks into a depth-2 aggregation
/// tree: pairs of blocks feed inner nodes, the root sees the stage input,
/// every inner node, and the final group, then max-pools. baseline mode
/// chains blocks and max-pools.
template <typename T>
class Stage {
 public:
  Stage() = default;
  Stage(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t in_channels,
        const ModelConfig& config, std::size_t index);
  Tensor<T> forward(const Tensor<T>& x, ops::NormMode mode, std::vector<BlockTap<T>>* taps = nullptr) const;

  ModelMode mode = ModelMode::rawnext;
  std::size_t pool = 3;
  std::vector<ResidualBlock<T>> blocks;
  std::vector<AggregationNode<T>> inner;
  std::optional<AggregationNode<T>> root;
};

/// Frame-attention weighted mean and standard deviation over time.
template <typename T>
class AttentiveStatsPool {
 public:
  AttentiveStatsPool() = default;
  AttentiveStatsPool(ParameterSet<T>& params, Initializer& init, const std::string& prefix, std::size_t channels,
                     std::size_t hidden);
  /// (batch, C, T) -> (batch, 2C).
  Tensor<T> forward(const Tensor<T>& x) const;

  Tensor<T> attention_weight, attention_bias, score_weight;
};

/// Full speaker embedding extractor.
template <typename T>
class RawNextModel {
 public:
  RawNextModel(ModelConfig config, std::uint64_t seed);

  /// Waveforms (batch, samples) or (batch, 1, samples) -> (batch, embedding_dim).
  Tensor<T> forward(const Tensor<T>& waveforms, ForwardTrace<T>* trace = nullptr) const;
  Tensor<T> frontend_forward(const Tensor<T>& waveforms) const;

  /// Gated branch tensors of every block for one forward pass (eval mode only).
  std::vector<BlockTap<T>> activation_tap(const Tensor<T>& waveforms) const;

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  ops::NormMode norm_mode() const { return training_ ? ops::NormMode::train : ops::NormMode::eval; }

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  const Stage<T>& stage(std::size_t i) const { return stages_.at(i); }
  std::size_t stage_count() const { return stages_.size(); }

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  bool training_ = false;
  std::array<ConvBn<T>, 3> frontend_;
  std::vector<Stage<T>> stages_;
  AttentiveStatsPool<T> pool_;
  Linear<T> embedding_;
};

/// Frame count after the front end for a waveform of `samples` samples.
std::size_t frontend_frames(std::size_t samples);

}  // namespace rawnext
