#pragma once

// Exhaustive-threshold EER / minDCF. Every candidate threshold is scored by
// counting all trials directly, with no sorting or incremental sweep.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "rawnext/evaluation.hpp"

namespace oracle {

struct OperatingPoint {
  double threshold, far, frr;
};

inline std::vector<OperatingPoint> brute_points(const rawnext::ScoreSet& set) {
  std::vector<double> candidates = set.scores;
  candidates.push_back(std::numeric_limits<double>::infinity());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::vector<OperatingPoint> out;
  for (double t : candidates) {
    double fa = 0, miss = 0, nt = 0, tg = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.targets[i]) {
        ++tg;
        miss += set.scores[i] < t;
      } else {
        ++nt;
        fa += set.scores[i] >= t;
      }
    }
    out.push_back({t, fa / nt, miss / tg});
  }
  return out;
}

struct BruteEer {
  double eer;
  bool at_point;  // FAR == FRR at some candidate threshold, no interpolation
};

// Crossing of FRR - FAR, linear between the two bracketing points.
inline BruteEer brute_eer(const rawnext::ScoreSet& set) {
  const auto pts = brute_points(set);
  for (const auto& p : pts)
    if (p.far == p.frr) return {p.far, true};
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d0 = pts[i].frr - pts[i].far, d1 = pts[i + 1].frr - pts[i + 1].far;
    if (d0 < 0 && d1 > 0) {
      const double a = d0 / (d0 - d1);
      return {pts[i].far + a * (pts[i + 1].far - pts[i].far), false};
    }
  }
  return {std::numeric_limits<double>::quiet_NaN(), false};
}

inline double brute_min_dcf(const rawnext::ScoreSet& set, double p = 0.01, double c_miss = 1, double c_fa = 1) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& pt : brute_points(set)) best = std::min(best, p * c_miss * pt.frr + (1 - p) * c_fa * pt.far);
  return best / std::min(p * c_miss, (1 - p) * c_fa);
}

// Both classes present; half the sets use small integer scores so ties and
// exact crossings occur.
inline rawnext::ScoreSet random_score_set(std::mt19937_64& rng) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
  const bool integer = rng() % 2 == 0;
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> ranks(0, static_cast<int>(n / 2));
  rawnext::ScoreSet set;
  for (std::size_t i = 0; i < n; ++i) {
    const bool target = i == 0 ? true : i == 1 ? false : rng() % 2 == 0;
    const double shift = target ? 0.3 : 0.0;
    set.add(integer ? static_cast<double>(ranks(rng)) + (target ? 1 : 0) : u(rng) + shift, target);
  }
  return set;
}

}  // namespace oracle
