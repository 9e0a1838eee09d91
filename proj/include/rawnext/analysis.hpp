#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "rawnext/model.hpp"

namespace rawnext {

/// Mean over batch, time and channels of each gated branch tensor, averaged
/// over every block. Indexed by Branch.
std::array<double, 3> mean_branch_activation(const RawNextModel<float>& model, std::span<const float> waveform);

/// Variation score S^r_L = m^r(L-second crop) - m^r(1-second crop). The
/// utterance is pre-emphasised, then centre-cropped (tiled if short).
std::array<double, 3> branch_activation_score(const RawNextModel<float>& model, std::span<const float> utterance,
                                              double length_s, float pre_emphasis = 0.97f);

struct ActivationRow {
  double length_s = 0;
  Branch branch = Branch::original;
  double score = 0;
};

/// Per length and branch, the mean score over utterances. `lengths_s` must
/// contain 1. Rows sorted by (length, branch).
std::vector<ActivationRow> sweep_lengths(const RawNextModel<float>& model,
                                         const std::vector<std::vector<float>>& utterances,
                                         std::vector<double> lengths_s, float pre_emphasis = 0.97f);

/// "length_s,branch,score" with 9 significant digits.
void export_csv(const std::vector<ActivationRow>& rows, const std::filesystem::path& path);
std::vector<ActivationRow> read_csv(const std::filesystem::path& path);

/// "1..8" or "1,2,5".
std::vector<double> parse_lengths(const std::string& text);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace rawnext
