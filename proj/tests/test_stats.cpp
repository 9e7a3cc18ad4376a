#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "outan/rng.hpp"
#include "outan/stats.hpp"

using namespace outan;

namespace {

// Counting-based mid-rank oracle: rank_i = #(y < y_i) + (#(y == y_i) + 1) / 2.
std::vector<double> rank_oracle(const std::vector<double>& v) {
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    size_t less = 0, equal = 0;
    for (double u : v) {
      if (u < v[i]) ++less;
      if (u == v[i]) ++equal;
    }
    ranks[i] = double(less) + 0.5 * double(equal + 1);
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double saa = 0, sbb = 0, sab = 0;
  for (size_t k = 0; k < a.size(); ++k) {
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
    sab += (a[k] - ma) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Full 2^n enumeration of sign assignments.
double wilcoxon_enum_p(const std::vector<double>& diffs, double w_obs) {
  std::vector<double> abs_d(diffs.size());
  for (size_t k = 0; k < diffs.size(); ++k) abs_d[k] = std::abs(diffs[k]);
  std::vector<double> ranks = rank_oracle(abs_d);
  const size_t n = diffs.size();
  size_t le = 0, ge = 0;
  for (size_t mask = 0; mask < (size_t(1) << n); ++mask) {
    double w = 0;
    for (size_t k = 0; k < n; ++k)
      if (mask & (size_t(1) << k)) w += ranks[k];
    if (w <= w_obs + 1e-12) ++le;
    if (w >= w_obs - 1e-12) ++ge;
  }
  double denom = double(size_t(1) << n);
  return std::min(1.0, 2.0 * std::min(double(le), double(ge)) / denom);
}

}  // namespace

TEST_CASE("spearman basics") {
  std::vector<double> x{1, 2, 3, 4, 5, 6};
  std::vector<double> y_same = x;
  std::vector<double> y_rev{6, 5, 4, 3, 2, 1};
  CHECK_THAT(spearman(x, y_same), Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(spearman(x, y_rev), Catch::Matchers::WithinAbs(-1.0, 1e-12));

  std::vector<double> c{2, 2, 2, 2, 2, 2};
  CHECK_THROWS_AS(spearman(c, x), ValidationError);
  CHECK_THROWS_AS(spearman(x, c), ValidationError);
  std::vector<double> shorter{1, 2};
  CHECK_THROWS_AS(spearman(shorter, shorter), ValidationError);
}

TEST_CASE("spearman with ties matches the counting-rank oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 3 + rng.uniform_int(0, 12);
    std::vector<double> x(n), y(n);
    for (size_t k = 0; k < n; ++k) {
      x[k] = double(rng.uniform_int(0, 4));  // heavy ties
      y[k] = double(rng.uniform_int(0, 4));
    }
    auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [&](double u) { return u == v[0]; });
    };
    if (constant(x) || constant(y)) continue;
    double expect = pearson(rank_oracle(x), rank_oracle(y));
    CHECK_THAT(spearman(x, y), Catch::Matchers::WithinAbs(expect, 1e-12));
  }
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  Rng rng(17);
  std::vector<double> x(40), y(40);
  for (size_t k = 0; k < x.size(); ++k) {
    x[k] = rng.normal();
    y[k] = rng.normal();
  }
  double base = spearman(x, y);
  std::vector<double> fx = x, gy = y;
  for (auto& v : fx) v = std::exp(3.0 * v) + 7.0;
  for (auto& v : gy) v = std::atan(v) * 2.0 - 1.0;
  CHECK_THAT(spearman(fx, gy), Catch::Matchers::WithinAbs(base, 1e-12));
}

TEST_CASE("wilcoxon: five positive differences give W=15, p=0.0625") {
  std::vector<double> s{0.3, 0.1, 0.5, 0.2, 0.4};
  WilcoxonResult r = wilcoxon_signed_rank(s);
  CHECK(r.exact);
  CHECK(r.w_plus == 15.0);
  CHECK_THAT(r.p_two_sided, Catch::Matchers::WithinAbs(0.0625, 1e-12));
}

TEST_CASE("wilcoxon: symmetric data is insignificant, zeros are dropped") {
  std::vector<double> sym{-3, -2, -1, 1, 2, 3, -0.5, 0.5};
  WilcoxonResult r = wilcoxon_signed_rank(sym);
  CHECK(r.p_two_sided > 0.9);

  std::vector<double> with_zeros{0, 0, 1, -1, 2, -2, 3, 0, -3, 4};
  CHECK(wilcoxon_signed_rank(with_zeros).n_nonzero == 7);

  std::vector<double> all_zero{0, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(wilcoxon_signed_rank(all_zero), ValidationError);
  std::vector<double> too_few{1, 2, 3, 4};
  CHECK_THROWS_AS(wilcoxon_signed_rank(too_few), ValidationError);
}

TEST_CASE("wilcoxon exact p matches full enumeration for n <= 12") {
  Rng rng(55);
  for (int trial = 0; trial < 60; ++trial) {
    size_t n = 5 + rng.uniform_int(0, 7);
    std::vector<double> s(n);
    for (auto& v : s) {
      v = std::round(rng.normal() * 2.0) / 2.0 + 0.25;  // induces |d| ties
      if (v == 0.0) v = 0.25;
    }
    WilcoxonResult r = wilcoxon_signed_rank(s);
    REQUIRE(r.exact);
    double expect = wilcoxon_enum_p(s, r.w_plus);
    REQUIRE_THAT(r.p_two_sided, Catch::Matchers::WithinAbs(expect, 1e-12));
  }
}

TEST_CASE("wilcoxon normal approximation tracks the exact test at n = 25") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> s(25);
    for (auto& v : s) v = rng.normal() + 0.3;
    WilcoxonResult exact = wilcoxon_signed_rank(s, 0.0, 25);
    WilcoxonResult approx = wilcoxon_signed_rank(s, 0.0, 0);
    REQUIRE(exact.exact);
    REQUIRE_FALSE(approx.exact);
    REQUIRE_THAT(approx.p_two_sided, Catch::Matchers::WithinAbs(exact.p_two_sided, 0.01));
  }
}
