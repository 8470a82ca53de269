// Detection and interscan-reproducibility statistics.

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cacdec::stats {

struct DetectionRow {
  bool predicted = false;
  bool reference = false;
};

struct DetectionMetrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> accuracy, sensitivity, fpr, f1;
};

// Standard confusion-matrix metrics; undefined ratios are reported absent.
DetectionMetrics detection_metrics(const std::vector<DetectionRow>& rows);

// |a-b| / ((a+b)/2); 0 when both are 0. Symmetric, bounded by [0,2].
double abs_rel_diff(double a, double b);

struct DeltaRSummary {
  double mean = 0, median = 0;
  size_t n = 0;
};

// Interscan variability over scan pairs: all pairs, and pairs where the
// method found CAC in both scans (both scores > 0).
DeltaRSummary delta_r(const std::vector<std::pair<double, double>>& pairs,
                      bool concordant_positive_only);

struct IccResult {
  double icc = 0;
  double ci_low = 0, ci_high = 0;
};

// Two-way random, absolute agreement, single measure (k = 2 scans per
// subject). 95% CI by the F-distribution construction. Returns nothing if the
// table is degenerate (no variance at all).
std::optional<IccResult> icc_absolute_agreement(
    const std::vector<std::pair<double, double>>& pairs, double alpha = 0.05);

struct BlandAltman {
  struct Row {
    double mean = 0, diff = 0;
    double loa_low = 0, loa_high = 0;  // limits of agreement evaluated at this mean
  };
  std::vector<Row> rows;
  double bias = 0;                    // mean difference
  double abs_slope = 0, abs_intercept = 0;  // regression of |diff| on mean
  double multiplier = 0;              // 1.96 * sqrt(pi/2)
};

// Nonuniform-difference Bland-Altman: |diff| is regressed on the pair mean and
// the fitted values scaled by 1.96*sqrt(pi/2) (half-normal |diff|) around the bias.
BlandAltman bland_altman(const std::vector<std::pair<double, double>>& pairs);

struct KappaResult {
  double kappa = 0;
  double ci_low = 0, ci_high = 0;
};

// Cohen's linearly weighted kappa over ordinal categories 0..n_categories-1,
// with a large-sample 95% CI.
KappaResult weighted_kappa(const std::vector<std::pair<int, int>>& category_pairs,
                           int n_categories = 4);

double median(std::vector<double> values);

}  // namespace cacdec::stats
