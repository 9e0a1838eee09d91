#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rawnext/data.hpp"
#include "rawnext/model.hpp"

namespace rawnext {

/// y[0] = x[0], y[n] = x[n] - coeff * x[n-1].
std::vector<float> pre_emphasis(std::span<const float> x, float coeff = 0.97f);

/// Tiles x end-to-end and truncates to `target` samples.
std::vector<float> duplicate_to_length(std::span<const float> x, std::size_t target);

struct BatchSpec {
  std::size_t speakers_per_batch = 8;
  std::size_t utts_per_speaker = 2;
  std::size_t fixed_len = 59049;
  std::size_t random_len_min = 16000;
  std::size_t random_len_max = 59049;

  std::size_t batch_size() const { return speakers_per_batch * utts_per_speaker; }
  void validate() const;
};

struct BatchItem {
  std::size_t utterance = 0;
  std::size_t label = 0;
  /// Segment length taken from the utterance before tiling to fixed_len.
  std::size_t source_len = 0;
  bool fixed = false;
};

struct Batch {
  Tensor<float> waveforms;  // (batch, fixed_len)
  std::vector<std::size_t> labels;
  std::vector<BatchItem> items;
};

/// Per selected speaker: one fixed_len segment and utts_per_speaker - 1
/// segments of uniform random length, all tiled to fixed_len.
Batch sample_batch(const Corpus& corpus, const BatchSpec& spec, std::mt19937_64& rng);

enum class LossKind { softmax, aam };
std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

template <typename T>
Tensor<T> softmax_ce_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  return ops::softmax_cross_entropy(logits, labels);
}

/// Cross-entropy over s * cos(theta + m) target / s * cos(theta) other logits,
/// with embeddings and class weights L2-normalised.
template <typename T>
Tensor<T> aam_softmax_loss(const Tensor<T>& embeddings, const Tensor<T>& class_weights,
                           const std::vector<std::size_t>& labels, T margin, T scale);

/// Training-only speaker classifier on top of the embedding.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead(ParameterSet<T>& params, Initializer& init, std::size_t embedding_dim, std::size_t classes,
                 LossKind kind, T margin = T(0.2), T scale = T(30));
  Tensor<T> loss(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels) const;
  /// Margin-free class scores used for accuracy.
  Tensor<T> scores(const Tensor<T>& embeddings) const;

  LossKind kind;
  T margin, scale;
  Tensor<T> weight, bias;  // bias only for plain softmax
};

struct AmsgradConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  // Divide sqrt(vmax) by sqrt(1 - b2^t) as well (the torch.optim amsgrad
  // form). Off: only the first moment is bias corrected.
  bool second_moment_correction = false;
};

template <typename T>
struct OptimizerState {
  struct Moments {
    std::vector<T> m, v, vmax;
  };
  AmsgradConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
};

/// One AMSGrad update over every parameter of every set:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  vmax <- max(vmax, v)
///   theta <- theta - lr * wd * theta        (decaying weights only)
///   theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(vmax) + eps)
/// or, with second_moment_correction, sqrt(vmax / (1 - b2^t)) in the denominator.
template <typename T>
void amsgrad_step(std::span<ParameterSet<T>* const> sets, OptimizerState<T>& state, double lr);

struct LRSchedule {
  double lr_start = 1e-3;
  double lr_end = 1e-7;
  double total_epochs = 5;
};

/// Cosine decay; `epoch` may be fractional.
double cosine_lr(double epoch, const LRSchedule& schedule);

struct TrainConfig {
  BatchSpec batch;
  LRSchedule schedule;
  AmsgradConfig optimizer;
  LossKind loss = LossKind::softmax;
  double aam_margin = 0.2;
  double aam_scale = 30.0;
  float pre_emphasis = 0.97f;
  std::size_t epochs = 5;
  /// 0: one pass worth of utterances, ceil(corpus size / batch size).
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0;
  double accuracy = 0;
};

/// Owns the classifier head, optimiser state and batch RNG for one model.
class Trainer {
 public:
  Trainer(RawNextModel<float>& model, Corpus corpus, TrainConfig config);

  /// Runs the next epoch; writes one line per step to `log` when given.
  EpochMetrics train_epoch(std::ostream* log = nullptr);

  std::size_t epochs_done() const { return epochs_done_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  const TrainConfig& config() const { return config_; }
  RawNextModel<float>& model() { return model_; }
  ParameterSet<float>& head_parameters() { return head_params_; }
  OptimizerState<float>& optimizer() { return optimizer_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t speaker_count() const { return corpus_.speaker_count(); }

  /// Resume bookkeeping after parameters and optimiser state were restored.
  void set_epochs_done(std::size_t epochs) { epochs_done_ = epochs; }

 private:
  RawNextModel<float>& model_;
  Corpus corpus_;  // pre-emphasised
  TrainConfig config_;
  ParameterSet<float> head_params_;
  std::optional<ClassifierHead<float>> head_;
  OptimizerState<float> optimizer_;
  std::mt19937_64 rng_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t epochs_done_ = 0;
};

}  // namespace rawnext
