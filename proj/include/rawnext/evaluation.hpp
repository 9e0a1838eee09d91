#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rawnext/data.hpp"
#include "rawnext/model.hpp"

namespace rawnext {

/// Centred window of round(duration_s * rate) samples; tiled when shorter.
std::vector<float> crop_middle(std::span<const float> x, double duration_s, std::uint32_t sample_rate = kSampleRate);

double cosine_score(std::span<const float> a, std::span<const float> b);

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> targets;

  void add(double score, bool target) {
    scores.push_back(score);
    targets.push_back(target);
  }
  std::size_t size() const { return scores.size(); }
};

enum class EerMode { interpolated, nearest };
std::string to_string(EerMode mode);
EerMode parse_eer_mode(const std::string& text);

struct EerResult {
  double eer = 0;  // fraction
  double threshold = 0;
};

/// Accept when score >= threshold. Thresholds sweep every distinct score and
/// +inf; the crossing of FAR and FRR is linearly interpolated between the
/// bracketing operating points (or the closest point in nearest mode).
EerResult compute_eer(const ScoreSet& set, EerMode mode = EerMode::interpolated);

struct DcfResult {
  double cost = 0;  // normalised
  double threshold = 0;
};

DcfResult compute_min_dcf(const ScoreSet& set, double p_target = 0.01, double c_miss = 1.0, double c_fa = 1.0);

/// Test-side crop length; empty means the whole utterance.
struct Duration {
  std::optional<double> seconds;
  std::string label() const;
  bool operator==(const Duration&) const = default;
};

/// "1,2,5,full" -> {1 s, 2 s, 5 s, full}.
std::vector<Duration> parse_durations(const std::string& text);

/// Embeddings of corpus files, cached per (path, duration).
class EmbeddingExtractor {
 public:
  EmbeddingExtractor(const RawNextModel<float>& model, std::filesystem::path root, float pre_emphasis = 0.97f);

  const std::vector<float>& embed(const std::string& path, const Duration& duration);
  /// Embedding of an in-memory waveform (not cached).
  std::vector<float> embed_samples(std::span<const float> samples, const Duration& duration) const;
  std::size_t cache_size() const { return cache_.size(); }

 private:
  const RawNextModel<float>& model_;
  std::filesystem::path root_;
  float pre_emphasis_;
  std::map<std::pair<std::string, std::string>, std::vector<float>> cache_;
};

struct TrialResult {
  Duration duration;
  EerResult eer;
  DcfResult dcf;
  std::vector<double> scores;  // parallel to the trial list
};

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

/// Enrollment side always full length; test side cropped to `duration`.
TrialResult evaluate_trials(EmbeddingExtractor& extractor, const std::vector<TrialPair>& trials,
                            const Duration& duration, EerMode mode = EerMode::interpolated,
                            const DcfParams& dcf = {});

void write_scores(const std::filesystem::path& path, const std::vector<TrialPair>& trials,
                  const std::vector<double>& scores);
/// One line per duration: "duration=<d> trials=<n> eer_percent=<x> min_dcf=<y>".
std::string format_report(const std::vector<TrialResult>& results);

}  // namespace rawnext
