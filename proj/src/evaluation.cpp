#include "rawnext/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "rawnext/training.hpp"

namespace rawnext {

std::vector<float> crop_middle(std::span<const float> x, double duration_s, std::uint32_t sample_rate) {
  if (!(duration_s > 0)) throw std::invalid_argument("crop_middle: duration must be positive");
  if (x.empty()) throw std::invalid_argument("crop_middle: empty input");
  const auto target = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (target == 0) throw std::invalid_argument("crop_middle: duration shorter than one sample");
  if (x.size() < target) return duplicate_to_length(x, target);
  const std::size_t start = (x.size() - target) / 2;
  return {x.begin() + static_cast<std::ptrdiff_t>(start), x.begin() + static_cast<std::ptrdiff_t>(start + target)};
}

double cosine_score(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_score: dimension mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) throw std::invalid_argument("cosine_score: zero-norm embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::string to_string(EerMode mode) { return mode == EerMode::interpolated ? "interpolated" : "nearest"; }

EerMode parse_eer_mode(const std::string& text) {
  if (text == "interpolated") return EerMode::interpolated;
  if (text == "nearest") return EerMode::nearest;
  throw ConfigError("eer_mode must be 'interpolated' or 'nearest', got '" + text + "'");
}

namespace {

struct OperatingPoint {
  double threshold, far, frr;
};

// FAR/FRR at every distinct score and at +inf, thresholds ascending.
std::vector<OperatingPoint> operating_points(const ScoreSet& set) {
  if (set.scores.size() != set.targets.size()) throw std::invalid_argument("score set: scores/labels size mismatch");
  std::size_t n_target = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!std::isfinite(set.scores[i])) throw NumericError("score set: non-finite score at index " + std::to_string(i));
    n_target += set.targets[i];
  }
  const std::size_t n_nontarget = set.size() - n_target;
  if (n_target == 0 || n_nontarget == 0)
    throw std::invalid_argument("score set needs at least one target and one nontarget trial");

  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });

  std::vector<OperatingPoint> points;
  std::size_t targets_below = 0, nontargets_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = set.scores[order[i]];
    points.push_back({t, double(n_nontarget - nontargets_below) / n_nontarget, double(targets_below) / n_target});
    for (; i < order.size() && set.scores[order[i]] == t; ++i) (set.targets[order[i]] ? targets_below : nontargets_below)++;
  }
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return points;
}

}  // namespace

EerResult compute_eer(const ScoreSet& set, EerMode mode) {
  const auto points = operating_points(set);
  if (mode == EerMode::nearest) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < points.size(); ++k)
      if (std::abs(points[k].far - points[k].frr) < std::abs(points[best].far - points[best].frr)) best = k;
    return {(points[best].far + points[best].frr) / 2, points[best].threshold};
  }
  // FRR - FAR rises from -1 at the lowest threshold to +1 at +inf.
  std::size_t k = 0;
  while (points[k].frr < points[k].far) ++k;
  const auto& hi = points[k];
  if (hi.frr == hi.far) return {hi.far, hi.threshold};
  const auto& lo = points[k - 1];
  const double d_lo = lo.frr - lo.far, d_hi = hi.frr - hi.far;
  const double alpha = -d_lo / (d_hi - d_lo);
  const double eer = lo.far + alpha * (hi.far - lo.far);
  const double threshold = std::isinf(hi.threshold) ? lo.threshold : lo.threshold + alpha * (hi.threshold - lo.threshold);
  return {eer, threshold};
}

DcfResult compute_min_dcf(const ScoreSet& set, double p_target, double c_miss, double c_fa) {
  if (!(p_target > 0 && p_target < 1)) throw std::invalid_argument("min_dcf: p_target must lie in (0, 1)");
  if (!(c_miss > 0) || !(c_fa > 0)) throw std::invalid_argument("min_dcf: costs must be positive");
  const auto points = operating_points(set);
  DcfResult best{std::numeric_limits<double>::infinity(), 0};
  for (const auto& p : points) {
    const double cost = p_target * c_miss * p.frr + (1 - p_target) * c_fa * p.far;
    if (cost < best.cost) best = {cost, p.threshold};
  }
  best.cost /= std::min(p_target * c_miss, (1 - p_target) * c_fa);
  return best;
}

std::string Duration::label() const {
  if (!seconds) return "full";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gs", *seconds);
  return buf;
}

std::vector<Duration> parse_durations(const std::string& text) {
  std::vector<Duration> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item == "full") {
      out.push_back({});
      continue;
    }
    if (!item.empty() && item.back() == 's') item.pop_back();
    std::size_t used = 0;
    double seconds = 0;
    try {
      seconds = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !(seconds > 0))
      throw ConfigError("duration '" + item + "' is neither 'full' nor a positive number of seconds");
    out.push_back({seconds});
  }
  if (out.empty()) throw ConfigError("empty duration list");
  return out;
}

EmbeddingExtractor::EmbeddingExtractor(const RawNextModel<float>& model, std::filesystem::path root,
                                       float pre_emphasis)
    : model_(model), root_(std::move(root)), pre_emphasis_(pre_emphasis) {}

std::vector<float> EmbeddingExtractor::embed_samples(std::span<const float> samples, const Duration& duration) const {
  if (model_.training()) throw std::logic_error("embedding extraction requires an eval-mode model");
  auto x = pre_emphasis(samples, pre_emphasis_);
  if (duration.seconds) x = crop_middle(x, *duration.seconds);
  if (x.size() < model_.config().min_samples()) x = duplicate_to_length(x, model_.config().min_samples());
  NoGradGuard no_grad;
  const std::size_t n = x.size();
  const auto e = model_.forward(Tensor<float>::from({1, n}, std::move(x)));
  return {e.values().begin(), e.values().end()};
}

const std::vector<float>& EmbeddingExtractor::embed(const std::string& path, const Duration& duration) {
  const auto key = std::make_pair(path, duration.label());
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const auto samples = read_wav(root_ / path);
  if (samples.empty()) throw IoError(path + ": no samples");
  return cache_.emplace(key, embed_samples(samples, duration)).first->second;
}

TrialResult evaluate_trials(EmbeddingExtractor& extractor, const std::vector<TrialPair>& trials,
                            const Duration& duration, EerMode mode, const DcfParams& dcf) {
  if (trials.empty()) throw std::invalid_argument("evaluate_trials: empty trial list");
  TrialResult result{duration, {}, {}, {}};
  ScoreSet set;
  for (const auto& t : trials) {
    const auto& enroll = extractor.embed(t.enroll, Duration{});
    const auto& test = extractor.embed(t.test, duration);
    const double s = cosine_score(enroll, test);
    result.scores.push_back(s);
    set.add(s, t.target);
  }
  result.eer = compute_eer(set, mode);
  result.dcf = compute_min_dcf(set, dcf.p_target, dcf.c_miss, dcf.c_fa);
  return result;
}

void write_scores(const std::filesystem::path& path, const std::vector<TrialPair>& trials,
                  const std::vector<double>& scores) {
  if (trials.size() != scores.size()) throw std::invalid_argument("write_scores: trial/score count mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scores " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < trials.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", scores[i]);
    out << trials[i].enroll << ' ' << trials[i].test << ' ' << buf << '\n';
  }
  if (!out) throw IoError("failed writing scores " + path.string());
}

std::string format_report(const std::vector<TrialResult>& results) {
  std::string out;
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "duration=%s trials=%zu eer_percent=%.6f eer_threshold=%.9g min_dcf=%.6f\n",
                  r.duration.label().c_str(), r.scores.size(), 100.0 * r.eer.eer, r.eer.threshold, r.dcf.cost);
    out += buf;
  }
  return out;
}

}  // namespace rawnext
