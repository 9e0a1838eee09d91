#include "rawnext/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "rawnext/evaluation.hpp"
#include "rawnext/training.hpp"

namespace rawnext {

std::array<double, 3> mean_branch_activation(const RawNextModel<float>& model, std::span<const float> waveform) {
  const std::size_t n = waveform.size();
  const auto taps = model.activation_tap(Tensor<float>::from({1, n}, std::vector<float>(waveform.begin(), waveform.end())));
  std::array<double, 3> means{};
  for (const auto& tap : taps) {
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0;
      for (float v : tap.gated[r].values()) sum += v;
      means[r] += sum / static_cast<double>(tap.gated[r].numel());
    }
  }
  for (auto& m : means) m /= static_cast<double>(taps.size());
  return means;
}

namespace {

std::array<double, 3> crop_activation(const RawNextModel<float>& model, std::span<const float> emphasised,
                                      double length_s) {
  auto x = crop_middle(emphasised, length_s);
  if (x.size() < model.config().min_samples()) x = duplicate_to_length(x, model.config().min_samples());
  return mean_branch_activation(model, x);
}

std::array<double, 3> difference(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

}  // namespace

std::array<double, 3> branch_activation_score(const RawNextModel<float>& model, std::span<const float> utterance,
                                              double length_s, float pre_emphasis_coeff) {
  const auto x = pre_emphasis(utterance, pre_emphasis_coeff);
  const auto reference = crop_activation(model, x, 1.0);
  if (length_s == 1.0) return difference(reference, reference);
  return difference(crop_activation(model, x, length_s), reference);
}

std::vector<ActivationRow> sweep_lengths(const RawNextModel<float>& model,
                                         const std::vector<std::vector<float>>& utterances,
                                         std::vector<double> lengths_s, float pre_emphasis_coeff) {
  if (utterances.empty()) throw std::invalid_argument("sweep_lengths: empty utterance set");
  if (std::find(lengths_s.begin(), lengths_s.end(), 1.0) == lengths_s.end())
    throw std::invalid_argument("sweep_lengths: lengths must include the 1 s reference");
  std::sort(lengths_s.begin(), lengths_s.end());
  lengths_s.erase(std::unique(lengths_s.begin(), lengths_s.end()), lengths_s.end());

  std::vector<std::array<double, 3>> sums(lengths_s.size(), std::array<double, 3>{});
  for (const auto& utt : utterances) {
    const auto x = pre_emphasis(utt, pre_emphasis_coeff);
    const auto reference = crop_activation(model, x, 1.0);
    for (std::size_t i = 0; i < lengths_s.size(); ++i) {
      const auto at = lengths_s[i] == 1.0 ? reference : crop_activation(model, x, lengths_s[i]);
      const auto d = difference(at, reference);
      for (std::size_t r = 0; r < 3; ++r) sums[i][r] += d[r];
    }
  }
  std::vector<ActivationRow> rows;
  for (std::size_t i = 0; i < lengths_s.size(); ++i)
    for (Branch b : kBranches)
      rows.push_back({lengths_s[i], b, sums[i][static_cast<std::size_t>(b)] / static_cast<double>(utterances.size())});
  return rows;
}

void export_csv(const std::vector<ActivationRow>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw std::invalid_argument("export_csv: empty table");
  auto sorted = rows;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ActivationRow& a, const ActivationRow& b) {
    return a.length_s != b.length_s ? a.length_s < b.length_s : a.branch < b.branch;
  });
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "length_s,branch,score\n";
  char buf[128];
  for (const auto& r : sorted) {
    std::snprintf(buf, sizeof buf, "%.9g,%s,%.9g\n", r.length_s, to_string(r.branch).c_str(), r.score);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ActivationRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "length_s,branch,score") throw IoError(path.string() + ": bad CSV header");
  std::vector<ActivationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string length, branch, score;
    if (!std::getline(ss, length, ',') || !std::getline(ss, branch, ',') || !std::getline(ss, score))
      throw IoError(path.string() + ": malformed row '" + line + "'");
    ActivationRow row;
    row.length_s = std::stod(length);
    row.score = std::stod(score);
    if (branch == "low") row.branch = Branch::low;
    else if (branch == "original") row.branch = Branch::original;
    else if (branch == "high") row.branch = Branch::high;
    else throw IoError(path.string() + ": unknown branch '" + branch + "'");
    rows.push_back(row);
  }
  return rows;
}

std::vector<double> parse_lengths(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !(v > 0)) throw ConfigError("length '" + s + "' is not a positive number");
    return v;
  };
  std::vector<double> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const double lo = number(text.substr(0, dots)), hi = number(text.substr(dots + 2));
    if (lo != std::floor(lo) || hi != std::floor(hi) || hi < lo) throw ConfigError("range '" + text + "' must be integer lo..hi");
    for (double v = lo; v <= hi; v += 1.0) out.push_back(v);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(number(item));
  if (out.empty()) throw ConfigError("empty length list");
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace rawnext
