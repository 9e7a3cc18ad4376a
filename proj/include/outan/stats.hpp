#pragma once

// Rank statistics used by the sequence-induction analysis: Spearman rank
// correlation with mid-ranks for ties, and the Wilcoxon signed-rank test with
// an exact null distribution up to n = 25 (dynamic program over rank sums,
// equivalent to enumerating all 2^n sign assignments) and a tie-corrected
// normal approximation with continuity correction beyond.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "outan/common.hpp"

namespace outan {

// Mid-ranks (1-based); tied values share the average of their rank block.
inline std::vector<double> midranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  for (size_t k = 0; k < n; ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t k = 0;
  while (k < n) {
    size_t j = k;
    while (j + 1 < n && values[order[j + 1]] == values[order[k]]) ++j;
    const double avg = 0.5 * double(k + 1 + j + 1);
    for (size_t m = k; m <= j; ++m) ranks[order[m]] = avg;
    k = j + 1;
  }
  return ranks;
}

// Pearson correlation of the mid-ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: length mismatch");
  if (x.size() < 3) throw ValidationError("spearman: need at least 3 pairs");
  std::vector<double> rx = midranks(x);
  std::vector<double> ry = midranks(y);
  const double n = double(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxx = 0, syy = 0, sxy = 0;
  for (size_t k = 0; k < x.size(); ++k) {
    const double dx = rx[k] - mean;
    const double dy = ry[k] - mean;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ValidationError("spearman: undefined correlation for a constant input");
  return sxy / std::sqrt(sxx * syy);
}

struct WilcoxonResult {
  double w_plus = 0;       // sum of positive ranks
  double p_two_sided = 1;
  int n_nonzero = 0;
  bool exact = false;
};

inline constexpr int kWilcoxonExactLimit = 25;

namespace detail {

// Exact null distribution of 2*W+ by DP over doubled ranks (mid-ranks are
// multiples of 1/2). counts[s] = number of sign assignments with 2*W+ = s;
// identical to enumerating all 2^n assignments.
inline std::vector<double> wilcoxon_null_counts(const std::vector<int>& doubled_ranks) {
  int total = 0;
  for (int r : doubled_ranks) total += r;
  std::vector<double> counts(size_t(total) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int r : doubled_ranks) {
    reach += r;
    for (int s = reach; s >= r; --s) counts[size_t(s)] += counts[size_t(s - r)];
  }
  return counts;
}

}  // namespace detail

inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> samples, double mu0 = 0.0,
                                           int exact_limit = kWilcoxonExactLimit) {
  std::vector<double> diffs;
  for (double v : samples)
    if (v - mu0 != 0.0) diffs.push_back(v - mu0);
  if (diffs.size() < 5)
    throw ValidationError("wilcoxon: need at least 5 nonzero differences");

  std::vector<double> abs_d(diffs.size());
  for (size_t k = 0; k < diffs.size(); ++k) abs_d[k] = std::abs(diffs[k]);
  std::vector<double> ranks = midranks(abs_d);

  WilcoxonResult result;
  result.n_nonzero = int(diffs.size());
  for (size_t k = 0; k < diffs.size(); ++k)
    if (diffs[k] > 0) result.w_plus += ranks[k];

  const int n = result.n_nonzero;
  if (n <= exact_limit) {
    std::vector<int> doubled(ranks.size());
    for (size_t k = 0; k < ranks.size(); ++k) doubled[k] = int(std::lround(2.0 * ranks[k]));
    std::vector<double> counts = detail::wilcoxon_null_counts(doubled);
    const double denom = std::pow(2.0, double(n));
    const int w2 = int(std::lround(2.0 * result.w_plus));
    double p_le = 0, p_ge = 0;
    for (int s = 0; s < int(counts.size()); ++s) {
      if (s <= w2) p_le += counts[size_t(s)];
      if (s >= w2) p_ge += counts[size_t(s)];
    }
    result.p_two_sided = std::min(1.0, 2.0 * std::min(p_le, p_ge) / denom);
    result.exact = true;
    return result;
  }

  // Normal approximation. Under random signs, E[W+] = sum(r)/2 and
  // Var[W+] = sum(r^2)/4, which already absorbs the tie correction.
  double sum_r = 0, sum_r2 = 0;
  for (double r : ranks) {
    sum_r += r;
    sum_r2 += r * r;
  }
  const double mean = sum_r / 2.0;
  const double sd = std::sqrt(sum_r2 / 4.0);
  double z = 0.0;
  if (result.w_plus > mean) z = (result.w_plus - mean - 0.5) / sd;
  else if (result.w_plus < mean) z = (result.w_plus - mean + 0.5) / sd;
  double p = std::erfc(std::abs(z) / std::sqrt(2.0));
  result.p_two_sided = std::max(p, std::numeric_limits<double>::min());  // keep p in (0, 1]
  result.exact = false;
  return result;
}

}  // namespace outan
