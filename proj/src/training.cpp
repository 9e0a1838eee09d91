#include "rawnext/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace rawnext {

std::vector<float> pre_emphasis(std::span<const float> x, float coeff) {
  if (x.empty()) throw std::invalid_argument("pre_emphasis: empty input");
  std::vector<float> y(x.size());
  y[0] = x[0];
  for (std::size_t n = 1; n < x.size(); ++n) y[n] = x[n] - coeff * x[n - 1];
  return y;
}

std::vector<float> duplicate_to_length(std::span<const float> x, std::size_t target) {
  if (x.empty()) throw std::invalid_argument("duplicate_to_length: empty input");
  std::vector<float> y;
  y.reserve(target);
  while (y.size() < target) {
    const std::size_t take = std::min(x.size(), target - y.size());
    y.insert(y.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return y;
}

void BatchSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("batch: " + what); };
  if (speakers_per_batch == 0) fail("speakers_per_batch must be positive");
  if (utts_per_speaker < 2) fail("utts_per_speaker must be >= 2");
  if (fixed_len == 0) fail("fixed_len must be positive");
  if (random_len_min < 1 || random_len_min > random_len_max || random_len_max > fixed_len)
    fail("random length range must lie within [1, fixed_len]");
}

namespace {

// Random window of `len` samples, tiled when the utterance is shorter.
std::vector<float> random_segment(std::span<const float> x, std::size_t len, std::mt19937_64& rng) {
  if (x.size() <= len) return duplicate_to_length(x, len);
  const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, x.size() - len)(rng);
  return {x.begin() + static_cast<std::ptrdiff_t>(offset), x.begin() + static_cast<std::ptrdiff_t>(offset + len)};
}

}  // namespace

Batch sample_batch(const Corpus& corpus, const BatchSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  if (corpus.speaker_count() == 0) throw std::invalid_argument("sample_batch: corpus has no speakers");
  const auto groups = corpus.by_speaker();

  std::vector<std::size_t> speakers(corpus.speaker_count());
  for (std::size_t i = 0; i < speakers.size(); ++i) speakers[i] = i;
  std::vector<std::size_t> chosen;
  if (speakers.size() >= spec.speakers_per_batch) {
    for (std::size_t i = 0; i < spec.speakers_per_batch; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, speakers.size() - 1)(rng);
      std::swap(speakers[i], speakers[j]);
      chosen.push_back(speakers[i]);
    }
  } else {
    for (std::size_t i = 0; i < spec.speakers_per_batch; ++i)
      chosen.push_back(std::uniform_int_distribution<std::size_t>(0, speakers.size() - 1)(rng));
  }

  Batch batch;
  std::vector<float> values;
  values.reserve(spec.batch_size() * spec.fixed_len);
  for (std::size_t speaker : chosen) {
    std::vector<std::size_t> pool = groups[speaker];
    if (pool.empty()) throw std::invalid_argument("sample_batch: speaker " + corpus.speakers[speaker] + " has no utterances");
    for (std::size_t k = 0; k < spec.utts_per_speaker; ++k) {
      // Distinct utterances while they last, then with replacement.
      std::size_t utt;
      if (k < pool.size()) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng);
        std::swap(pool[k], pool[j]);
        utt = pool[k];
      } else {
        utt = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      }
      const auto& samples = corpus.utterances[utt].samples;
      BatchItem item{utt, speaker, spec.fixed_len, k == 0};
      std::vector<float> segment;
      if (item.fixed) {
        segment = random_segment(samples, spec.fixed_len, rng);
      } else {
        item.source_len =
            std::uniform_int_distribution<std::size_t>(spec.random_len_min, spec.random_len_max)(rng);
        segment = duplicate_to_length(random_segment(samples, item.source_len, rng), spec.fixed_len);
      }
      values.insert(values.end(), segment.begin(), segment.end());
      batch.labels.push_back(speaker);
      batch.items.push_back(item);
    }
  }
  batch.waveforms = Tensor<float>::from({spec.batch_size(), spec.fixed_len}, std::move(values));
  return batch;
}

std::string to_string(LossKind kind) { return kind == LossKind::softmax ? "softmax" : "aam"; }

LossKind parse_loss_kind(const std::string& text) {
  if (text == "softmax") return LossKind::softmax;
  if (text == "aam") return LossKind::aam;
  throw ConfigError("loss must be 'softmax' or 'aam', got '" + text + "'");
}

template <typename T>
Tensor<T> aam_softmax_loss(const Tensor<T>& embeddings, const Tensor<T>& class_weights,
                           const std::vector<std::size_t>& labels, T margin, T scale) {
  auto cosines = ops::linear(ops::l2_normalize_rows(embeddings), ops::l2_normalize_rows(class_weights), Tensor<T>{});
  return ops::softmax_cross_entropy(ops::additive_angular_margin(cosines, labels, margin, scale), labels);
}

template <typename T>
ClassifierHead<T>::ClassifierHead(ParameterSet<T>& params, Initializer& init, std::size_t embedding_dim,
                                  std::size_t classes, LossKind kind_, T margin_, T scale_)
    : kind(kind_), margin(margin_), scale(scale_) {
  weight = init.uniform<T>({classes, embedding_dim}, embedding_dim);
  params.add_parameter("head.weight", weight, kind == LossKind::softmax);
  if (kind == LossKind::softmax) {
    bias = init.uniform<T>({classes}, embedding_dim);
    params.add_parameter("head.bias", bias, false);
  }
}

template <typename T>
Tensor<T> ClassifierHead<T>::loss(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels) const {
  if (kind == LossKind::softmax) return softmax_ce_loss(ops::linear(embeddings, weight, bias), labels);
  return aam_softmax_loss(embeddings, weight, labels, margin, scale);
}

template <typename T>
Tensor<T> ClassifierHead<T>::scores(const Tensor<T>& embeddings) const {
  if (kind == LossKind::softmax) return ops::linear(embeddings, weight, bias);
  return ops::linear(ops::l2_normalize_rows(embeddings), ops::l2_normalize_rows(weight), Tensor<T>{});
}

template <typename T>
void amsgrad_step(std::span<ParameterSet<T>* const> sets, OptimizerState<T>& state, double lr) {
  const auto& cfg = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double correction2 =
      cfg.second_moment_correction ? std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step))) : 1.0;
  for (ParameterSet<T>* set : sets) {
    for (const auto& [name, param] : set->parameters()) {
      if (!param.has_grad()) throw std::logic_error("amsgrad: parameter '" + name + "' has no gradient");
      auto& mom = state.moments[name];
      const std::size_t n = param.numel();
      if (mom.m.empty()) {
        mom.m.assign(n, T(0));
        mom.v.assign(n, T(0));
        mom.vmax.assign(n, T(0));
      }
      const double decay = set->decays(name) ? lr * cfg.weight_decay : 0.0;
      Tensor<T> handle = param;
      auto theta = handle.mutable_values();
      auto g = param.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = g[i];
        mom.m[i] = static_cast<T>(cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gi);
        mom.v[i] = static_cast<T>(cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gi * gi);
        mom.vmax[i] = std::max(mom.vmax[i], mom.v[i]);
        double t = theta[i];
        t -= decay * t;
        t -= lr * (mom.m[i] / correction1) / (std::sqrt(static_cast<double>(mom.vmax[i])) / correction2 + cfg.eps);
        theta[i] = static_cast<T>(t);
      }
    }
  }
}

double cosine_lr(double epoch, const LRSchedule& schedule) {
  if (!(epoch >= 0.0 && epoch <= schedule.total_epochs))
    throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(schedule.total_epochs) + "]");
  if (epoch == 0.0) return schedule.lr_start;
  if (epoch == schedule.total_epochs) return schedule.lr_end;
  return schedule.lr_end + 0.5 * (schedule.lr_start - schedule.lr_end) *
                               (1.0 + std::cos(std::numbers::pi * epoch / schedule.total_epochs));
}

void TrainConfig::validate() const {
  batch.validate();
  auto fail = [](const std::string& what) { throw ConfigError("train: " + what); };
  if (!(schedule.lr_start > 0) || !(schedule.lr_end > 0) || schedule.lr_end > schedule.lr_start)
    fail("learning rates must satisfy 0 < lr_end <= lr_start");
  if (epochs == 0) fail("epochs must be positive");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1))
    fail("betas must lie in [0, 1)");
  if (!(optimizer.eps > 0)) fail("eps must be positive");
  if (!(optimizer.weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(aam_margin >= 0 && aam_margin < std::numbers::pi / 2)) fail("aam_margin must lie in [0, pi/2)");
  if (!(aam_scale > 0)) fail("aam_scale must be positive");
  if (!(pre_emphasis >= 0 && pre_emphasis < 1)) fail("pre_emphasis must lie in [0, 1)");
}

namespace {

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace

Trainer::Trainer(RawNextModel<float>& model, Corpus corpus, TrainConfig config)
    : model_(model), corpus_(std::move(corpus)), config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  if (corpus_.speaker_count() == 0) throw std::invalid_argument("trainer: corpus has no speakers");
  for (auto& utt : corpus_.utterances) utt.samples = pre_emphasis(utt.samples, config_.pre_emphasis);
  Initializer init(mix_seed({config_.seed, 0x4EADull}));
  head_.emplace(head_params_, init, model_.config().embedding_dim, corpus_.speaker_count(), config_.loss,
                static_cast<float>(config_.aam_margin), static_cast<float>(config_.aam_scale));
  optimizer_.config = config_.optimizer;
  config_.schedule.total_epochs = static_cast<double>(config_.epochs);
  const std::size_t batch = config_.batch.batch_size();
  steps_per_epoch_ = config_.steps_per_epoch ? config_.steps_per_epoch
                                             : (corpus_.utterances.size() + batch - 1) / batch;
}

EpochMetrics Trainer::train_epoch(std::ostream* log) {
  if (epochs_done_ >= config_.epochs) throw std::logic_error("trainer: all configured epochs are done");
  model_.set_training(true);
  EpochMetrics metrics;
  metrics.epoch = epochs_done_ + 1;
  std::size_t correct = 0, seen = 0;
  ParameterSet<float>* sets[] = {&model_.parameters(), &head_params_};

  for (std::size_t step = 0; step < steps_per_epoch_; ++step) {
    const double lr =
        cosine_lr(static_cast<double>(epochs_done_) + static_cast<double>(step) / steps_per_epoch_, config_.schedule);
    const Batch batch = sample_batch(corpus_, config_.batch, rng_);
    const auto embeddings = model_.forward(batch.waveforms);
    const auto loss = head_->loss(embeddings, batch.labels);
    const double loss_value = loss.item();

    auto where = [&] { return " at epoch " + std::to_string(metrics.epoch) + " step " + std::to_string(step + 1); };
    if (!std::isfinite(loss_value)) {
      std::string culprit = "loss";
      if (!all_finite(embeddings.values())) culprit = "embedding";
      for (const auto& [name, p] : model_.parameters().parameters())
        if (!all_finite(p.values())) {
          culprit = name;
          break;
        }
      throw NumericError("non-finite loss" + where() + "; first non-finite tensor: " + culprit);
    }
    backward(loss);
    for (auto* set : sets)
      for (const auto& [name, p] : set->parameters())
        if (p.has_grad() && !all_finite(p.grad()))
          throw NumericError("non-finite gradient" + where() + " in parameter " + name);
    amsgrad_step<float>(sets, optimizer_, lr);
    for (auto* set : sets) set->zero_grad();

    // Training accuracy from margin-free class scores.
    std::size_t step_correct = 0;
    {
      NoGradGuard no_grad;
      const auto scores = head_->scores(embeddings.detach());
      const std::size_t classes = scores.dim(1);
      auto v = scores.values();
      for (std::size_t r = 0; r < batch.labels.size(); ++r) {
        const auto row = v.subspan(r * classes, classes);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        step_correct += best == batch.labels[r];
      }
    }
    correct += step_correct;
    seen += batch.labels.size();
    metrics.mean_loss += loss_value;

    if (log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch=%zu step=%zu lr=%.9g loss=%.9g acc=%.9g\n", metrics.epoch, step + 1, lr,
                    loss_value, static_cast<double>(step_correct) / batch.labels.size());
      *log << line;
    }
  }
  metrics.steps = steps_per_epoch_;
  metrics.mean_loss /= static_cast<double>(steps_per_epoch_);
  metrics.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  if (log) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch=%zu mean_loss=%.9g accuracy=%.9g\n", metrics.epoch, metrics.mean_loss,
                  metrics.accuracy);
    *log << line << std::flush;
  }
  ++epochs_done_;
  model_.set_training(false);
  return metrics;
}

template class ClassifierHead<float>;
template class ClassifierHead<double>;
template Tensor<float> aam_softmax_loss(const Tensor<float>&, const Tensor<float>&, const std::vector<std::size_t>&,
                                        float, float);
template Tensor<double> aam_softmax_loss(const Tensor<double>&, const Tensor<double>&,
                                         const std::vector<std::size_t>&, double, double);
template void amsgrad_step(std::span<ParameterSet<float>* const>, OptimizerState<float>&, double);
template void amsgrad_step(std::span<ParameterSet<double>* const>, OptimizerState<double>&, double);

}  // namespace rawnext
