#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cacdec/stats.hpp"

using namespace cacdec::stats;

// --- independent brute-force oracles -----------------------------------------

namespace {

// ICC(A,1) computed straight from the two-way ANOVA definitions, cell by cell.
double icc_oracle(const std::vector<std::pair<double, double>>& pairs) {
  const int n = static_cast<int>(pairs.size());
  const int k = 2;
  std::vector<std::vector<double>> x(n, std::vector<double>(k));
  for (int i = 0; i < n; ++i) {
    x[i][0] = pairs[i].first;
    x[i][1] = pairs[i].second;
  }
  double grand = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) grand += x[i][j];
  grand /= n * k;
  double ss_rows = 0, ss_cols = 0, ss_err = 0;
  for (int i = 0; i < n; ++i) {
    double rm = (x[i][0] + x[i][1]) / 2;
    ss_rows += k * (rm - grand) * (rm - grand);
  }
  for (int j = 0; j < k; ++j) {
    double cm = 0;
    for (int i = 0; i < n; ++i) cm += x[i][j];
    cm /= n;
    ss_cols += n * (cm - grand) * (cm - grand);
  }
  for (int i = 0; i < n; ++i) {
    double rm = (x[i][0] + x[i][1]) / 2;
    for (int j = 0; j < k; ++j) {
      double cm = 0;
      for (int r = 0; r < n; ++r) cm += x[r][j];
      cm /= n;
      double resid = x[i][j] - rm - cm + grand;
      ss_err += resid * resid;
    }
  }
  double msr = ss_rows / (n - 1);
  double msc = ss_cols / (k - 1);
  double mse = ss_err / ((n - 1) * (k - 1));
  return (msr - mse) / (msr + (k - 1) * mse + (double(k) / n) * (msc - mse));
}

// Weighted kappa via the disagreement-weight identity kappa = 1 - sum(vO)/sum(vE).
double kappa_oracle(const std::vector<std::pair<int, int>>& cats, int C) {
  const double n = static_cast<double>(cats.size());
  std::vector<std::vector<double>> O(C, std::vector<double>(C, 0.0));
  for (auto [a, b] : cats) O[a][b] += 1.0;
  std::vector<double> p(C, 0), q(C, 0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      p[i] += O[i][j] / n;
      q[j] += O[i][j] / n;
    }
  double num = 0, den = 0;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      double v = std::abs(i - j) / double(C - 1);
      num += v * O[i][j] / n;
      den += v * p[i] * q[j];
    }
  if (den == 0) return 1.0;
  return 1.0 - num / den;
}

}  // namespace

TEST_CASE("detection metrics: perfect, paper sensitivity example, all-negative") {
  std::vector<DetectionRow> perfect;
  for (int i = 0; i < 10; ++i) perfect.push_back({i % 2 == 0, i % 2 == 0});
  DetectionMetrics m = detection_metrics(perfect);
  CHECK(*m.accuracy == doctest::Approx(1.0));
  CHECK(*m.sensitivity == doctest::Approx(1.0));
  CHECK(*m.fpr == doctest::Approx(0.0));
  CHECK(*m.f1 == doctest::Approx(1.0));

  // 34 detected of 51 reference-positive pairs.
  std::vector<DetectionRow> rca;
  for (int i = 0; i < 34; ++i) rca.push_back({true, true});
  for (int i = 0; i < 17; ++i) rca.push_back({false, true});
  DetectionMetrics m2 = detection_metrics(rca);
  CHECK(*m2.sensitivity == doctest::Approx(34.0 / 51.0).epsilon(1e-12));
  CHECK_FALSE(m2.fpr.has_value());  // no reference negatives in this table

  std::vector<DetectionRow> allneg;
  for (int i = 0; i < 8; ++i) allneg.push_back({false, i < 4});
  DetectionMetrics m3 = detection_metrics(allneg);
  CHECK(*m3.sensitivity == doctest::Approx(0.0));
  CHECK(*m3.fpr == doctest::Approx(0.0));

  CHECK_THROWS_AS(detection_metrics({}), std::invalid_argument);
}

TEST_CASE("abs_rel_diff hand values and properties") {
  CHECK(abs_rel_diff(5.0, 5.0) == 0.0);
  CHECK(abs_rel_diff(0.0, 0.0) == 0.0);
  CHECK(abs_rel_diff(100.0, 300.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(abs_rel_diff(-1.0, 2.0), std::invalid_argument);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1000);
  for (int i = 0; i < 200; ++i) {
    double a = u(rng), b = u(rng);
    double d = abs_rel_diff(a, b);
    CHECK(d == doctest::Approx(abs_rel_diff(b, a)).epsilon(1e-12));
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
  }
}

TEST_CASE("delta_r stratifies all pairs vs concordant positive pairs") {
  std::vector<std::pair<double, double>> pairs = {
      {100, 150}, {0, 80}, {0, 0}, {200, 200}};
  DeltaRSummary all = delta_r(pairs, false);
  CHECK(all.n == 4);
  // (100,150)->0.4, (0,80)->2, (0,0)->0, (200,200)->0
  CHECK(all.mean == doctest::Approx((0.4 + 2.0 + 0.0 + 0.0) / 4).epsilon(1e-12));
  DeltaRSummary pos = delta_r(pairs, true);
  CHECK(pos.n == 2);
  CHECK(pos.mean == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(pos.median == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("ICC is 1 for identical columns with between-subject variance") {
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({10.0 * i, 10.0 * i});
  auto r = icc_absolute_agreement(pairs);
  REQUIRE(r.has_value());
  CHECK(r->icc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ICC penalizes a constant offset (absolute agreement)") {
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 12; ++i) pairs.push_back({double(i), double(i) + 50.0});
  auto r = icc_absolute_agreement(pairs);
  REQUIRE(r.has_value());
  // Pearson correlation would be 1; absolute agreement must be much lower.
  CHECK(r->icc < 0.5);
}

TEST_CASE("ICC matches the brute-force ANOVA oracle on random tables") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 100);
  std::normal_distribution<double> noise(0, 5);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::pair<double, double>> pairs;
    int n = 5 + static_cast<int>(u(rng) / 5);
    for (int i = 0; i < n; ++i) {
      double base = u(rng);
      pairs.push_back({base + noise(rng), base + noise(rng)});
    }
    auto r = icc_absolute_agreement(pairs);
    REQUIRE(r.has_value());
    CHECK(std::abs(r->icc - icc_oracle(pairs)) < 1e-9);
  }
}

TEST_CASE("ICC is undefined on a zero-variance table") {
  std::vector<std::pair<double, double>> pairs(5, {3.0, 3.0});
  CHECK_FALSE(icc_absolute_agreement(pairs).has_value());
  CHECK_THROWS_AS(icc_absolute_agreement({{1, 2}, {3, 4}}), std::invalid_argument);
}

TEST_CASE("ICC confidence interval brackets the estimate") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0, 100);
  std::normal_distribution<double> noise(0, 10);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 30; ++i) {
    double base = u(rng);
    pairs.push_back({base + noise(rng), base + noise(rng)});
  }
  auto r = icc_absolute_agreement(pairs);
  REQUIRE(r.has_value());
  CHECK(r->ci_low <= r->icc);
  CHECK(r->icc <= r->ci_high);
  CHECK(r->ci_low > -1.0);
  CHECK(r->ci_high <= 1.0 + 1e-12);
}

TEST_CASE("Bland-Altman collapses onto zero for identical columns") {
  std::vector<std::pair<double, double>> pairs;
  for (int i = 1; i <= 6; ++i) pairs.push_back({7.0 * i, 7.0 * i});
  BlandAltman ba = bland_altman(pairs);
  CHECK(ba.bias == doctest::Approx(0.0));
  for (const auto& row : ba.rows) {
    CHECK(row.diff == doctest::Approx(0.0));
    CHECK(row.loa_low == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(row.loa_high == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("Bland-Altman constant |diff| with zero bias gives LoA of +-2.4565 d") {
  const double d = 8.0;
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 10; ++i) {
    double m = 50.0 + 10.0 * i;
    if (i % 2 == 0)
      pairs.push_back({m + d / 2, m - d / 2});
    else
      pairs.push_back({m - d / 2, m + d / 2});
  }
  BlandAltman ba = bland_altman(pairs);
  CHECK(ba.bias == doctest::Approx(0.0).epsilon(1e-12));
  double expect = d * 1.96 * std::sqrt(std::numbers::pi / 2.0);
  for (const auto& row : ba.rows) {
    CHECK(row.loa_high == doctest::Approx(expect).epsilon(1e-9));
    CHECK(row.loa_low == doctest::Approx(-expect).epsilon(1e-9));
  }
  CHECK(ba.multiplier == doctest::Approx(2.4565).epsilon(1e-4));
}

TEST_CASE("Bland-Altman recovers a proportional |diff| slope") {
  const double c = 0.2;
  std::vector<std::pair<double, double>> pairs;
  for (int i = 1; i <= 12; ++i) {
    double m = 10.0 * i;
    double d = c * m * (i % 2 == 0 ? 1.0 : -1.0);
    pairs.push_back({m + d / 2, m - d / 2});
  }
  BlandAltman ba = bland_altman(pairs);
  // Fitted LoA slope should match the construction slope times the multiplier.
  double fitted_slope = ba.abs_slope * ba.multiplier;
  CHECK(std::abs(fitted_slope - c * ba.multiplier) / (c * ba.multiplier) < 0.05);
  CHECK(ba.abs_intercept == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("Bland-Altman matches a hand least-squares oracle on random tables") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(10, 200);
  std::normal_distribution<double> noise(0, 7);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 15; ++i) {
      double base = u(rng);
      pairs.push_back({base + noise(rng), base + noise(rng)});
    }
    BlandAltman ba = bland_altman(pairs);
    // Oracle: normal equations on centered data.
    double mx = 0, my = 0;
    for (auto& [a, b] : pairs) {
      mx += (a + b) / 2;
      my += std::abs(a - b);
    }
    mx /= pairs.size();
    my /= pairs.size();
    double sxy = 0, sxx = 0;
    for (auto& [a, b] : pairs) {
      double x = (a + b) / 2 - mx, y = std::abs(a - b) - my;
      sxy += x * y;
      sxx += x * x;
    }
    double slope = sxy / sxx;
    double intercept = my - slope * mx;
    CHECK(std::abs(ba.abs_slope - slope) < 1e-9);
    CHECK(std::abs(ba.abs_intercept - intercept) < 1e-9);
    double bias = 0;
    for (auto& [a, b] : pairs) bias += a - b;
    bias /= pairs.size();
    for (auto& row : ba.rows) {
      double fitted = intercept + slope * row.mean;
      CHECK(std::abs(row.loa_high - (bias + ba.multiplier * fitted)) < 1e-9);
    }
  }
  CHECK_THROWS_AS(bland_altman({{1, 2}, {3, 4}}), std::invalid_argument);
}

TEST_CASE("weighted kappa is 1 for perfect agreement and only then") {
  std::vector<std::pair<int, int>> perfect = {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {1, 1}};
  KappaResult r = weighted_kappa(perfect);
  CHECK(r.kappa == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::pair<int, int>> off = {{0, 0}, {1, 1}, {2, 3}, {3, 3}};
  CHECK(weighted_kappa(off).kappa < 1.0);
}

TEST_CASE("weighted kappa of independent shuffled categories is near zero") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> cat(0, 3);
  std::vector<std::pair<int, int>> cats;
  for (int i = 0; i < 1000; ++i) cats.push_back({cat(rng), cat(rng)});
  KappaResult r = weighted_kappa(cats);
  CHECK(std::abs(r.kappa) < 0.1);
}

TEST_CASE("weighted kappa matches the disagreement-weight oracle on random tables") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> cat(0, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::pair<int, int>> cats;
    for (int i = 0; i < 50; ++i) {
      int a = cat(rng);
      int b = std::min(3, std::max(0, a + (cat(rng) == 0 ? 1 : 0) - (cat(rng) == 1 ? 1 : 0)));
      cats.push_back({a, b});
    }
    KappaResult r = weighted_kappa(cats);
    CHECK(std::abs(r.kappa - kappa_oracle(cats, 4)) < 1e-9);
    CHECK(r.ci_low <= r.kappa);
    CHECK(r.kappa <= r.ci_high);
  }
  CHECK_THROWS_AS(weighted_kappa({}), std::invalid_argument);
  CHECK_THROWS_AS(weighted_kappa({{0, 7}}), std::invalid_argument);
}

TEST_CASE("kappa is invariant under permuting subject order") {
  std::mt19937_64 rng(47);
  std::uniform_int_distribution<int> cat(0, 3);
  std::vector<std::pair<int, int>> cats;
  for (int i = 0; i < 60; ++i) cats.push_back({cat(rng), cat(rng)});
  double k1 = weighted_kappa(cats).kappa;
  std::shuffle(cats.begin(), cats.end(), rng);
  double k2 = weighted_kappa(cats).kappa;
  CHECK(k1 == doctest::Approx(k2).epsilon(1e-12));
}

TEST_CASE("median handles odd and even counts") {
  CHECK(median({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(median({}), std::invalid_argument);
}
