#include "cacdec/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

namespace cacdec::stats {

DetectionMetrics detection_metrics(const std::vector<DetectionRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("detection_metrics: empty table");
  DetectionMetrics m;
  for (const auto& r : rows) {
    if (r.predicted && r.reference) ++m.tp;
    else if (r.predicted && !r.reference) ++m.fp;
    else if (!r.predicted && r.reference) ++m.fn;
    else ++m.tn;
  }
  const double n = static_cast<double>(rows.size());
  m.accuracy = (m.tp + m.tn) / n;
  if (m.tp + m.fn > 0) m.sensitivity = static_cast<double>(m.tp) / (m.tp + m.fn);
  if (m.fp + m.tn > 0) m.fpr = static_cast<double>(m.fp) / (m.fp + m.tn);
  if (2 * m.tp + m.fp + m.fn > 0)
    m.f1 = 2.0 * m.tp / (2.0 * m.tp + m.fp + m.fn);
  return m;
}

double abs_rel_diff(double a, double b) {
  if (a < 0 || b < 0) throw std::invalid_argument("abs_rel_diff: negative score");
  if (a == 0 && b == 0) return 0.0;
  return std::abs(a - b) / ((a + b) / 2.0);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

DeltaRSummary delta_r(const std::vector<std::pair<double, double>>& pairs,
                      bool concordant_positive_only) {
  std::vector<double> deltas;
  for (const auto& [a, b] : pairs) {
    if (concordant_positive_only && !(a > 0 && b > 0)) continue;
    deltas.push_back(abs_rel_diff(a, b));
  }
  DeltaRSummary s;
  s.n = deltas.size();
  if (deltas.empty()) return s;
  double sum = 0;
  for (double d : deltas) sum += d;
  s.mean = sum / deltas.size();
  s.median = median(deltas);
  return s;
}

std::optional<IccResult> icc_absolute_agreement(
    const std::vector<std::pair<double, double>>& pairs, double alpha) {
  const int n = static_cast<int>(pairs.size());
  const int k = 2;
  if (n < 3) throw std::invalid_argument("icc: need at least 3 subjects");

  double grand = 0;
  for (const auto& [a, b] : pairs) grand += a + b;
  grand /= (n * k);

  double c1 = 0, c2 = 0;
  for (const auto& [a, b] : pairs) {
    c1 += a;
    c2 += b;
  }
  c1 /= n;
  c2 /= n;

  double ssr = 0, ssc = 0, sst = 0;
  for (const auto& [a, b] : pairs) {
    double row_mean = (a + b) / 2.0;
    ssr += (row_mean - grand) * (row_mean - grand);
    sst += (a - grand) * (a - grand) + (b - grand) * (b - grand);
  }
  ssr *= k;
  ssc = n * ((c1 - grand) * (c1 - grand) + (c2 - grand) * (c2 - grand));
  double sse = sst - ssr - ssc;
  if (sse < 0) sse = 0;  // numerical guard

  double msr = ssr / (n - 1);
  double msc = ssc / (k - 1);
  double mse = sse / ((n - 1) * (k - 1));

  double denom = msr + (k - 1) * mse + (static_cast<double>(k) / n) * (msc - mse);
  if (std::abs(denom) < 1e-300) return std::nullopt;  // zero variance: undefined
  IccResult r;
  r.icc = (msr - mse) / denom;

  // McGraw & Wong CI for ICC(A,1), Satterthwaite df for the mixed term.
  double rr = r.icc;
  double a_ = k * rr / (n * (1.0 - rr));
  double b_ = 1.0 + k * rr * (n - 1.0) / (n * (1.0 - rr));
  double num = a_ * msc + b_ * mse;
  double v = num * num /
             ((a_ * msc) * (a_ * msc) / (k - 1) +
              (b_ * mse) * (b_ * mse) / ((n - 1.0) * (k - 1.0)));
  if (!std::isfinite(v) || v <= 0 || mse == 0.0) {
    r.ci_low = r.icc;
    r.ci_high = r.icc;
    return r;
  }
  boost::math::fisher_f_distribution<double> f1(n - 1.0, v);
  boost::math::fisher_f_distribution<double> f2(v, n - 1.0);
  double fl = boost::math::quantile(f1, 1.0 - alpha / 2.0);
  double fu = boost::math::quantile(f2, 1.0 - alpha / 2.0);
  double kn = static_cast<double>(k) * n;
  r.ci_low = n * (msr - fl * mse) /
             (fl * (k * msc + (kn - k - n) * mse) + n * msr);
  r.ci_high = n * (fu * msr - mse) /
              (k * msc + (kn - k - n) * mse + n * fu * msr);
  return r;
}

BlandAltman bland_altman(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 3) throw std::invalid_argument("bland_altman: need at least 3 pairs");
  BlandAltman out;
  out.multiplier = 1.96 * std::sqrt(std::numbers::pi / 2.0);

  const size_t n = pairs.size();
  double bias = 0;
  for (const auto& [a, b] : pairs) bias += a - b;
  bias /= n;
  out.bias = bias;

  // Least squares of |diff| on mean.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [a, b] : pairs) {
    double m = (a + b) / 2.0, d = std::abs(a - b);
    sx += m;
    sy += d;
    sxx += m * m;
    sxy += m * d;
  }
  double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-30) {
    out.abs_slope = 0;
    out.abs_intercept = sy / n;
  } else {
    out.abs_slope = (n * sxy - sx * sy) / denom;
    out.abs_intercept = (sy - out.abs_slope * sx) / n;
  }

  for (const auto& [a, b] : pairs) {
    BlandAltman::Row row;
    row.mean = (a + b) / 2.0;
    row.diff = a - b;
    double fitted = out.abs_intercept + out.abs_slope * row.mean;
    row.loa_low = bias - out.multiplier * fitted;
    row.loa_high = bias + out.multiplier * fitted;
    out.rows.push_back(row);
  }
  return out;
}

KappaResult weighted_kappa(const std::vector<std::pair<int, int>>& category_pairs,
                           int n_categories) {
  if (category_pairs.empty()) throw std::invalid_argument("weighted_kappa: empty table");
  const int C = n_categories;
  const double n = static_cast<double>(category_pairs.size());
  std::vector<double> O(static_cast<size_t>(C) * C, 0.0);
  for (const auto& [a, b] : category_pairs) {
    if (a < 0 || a >= C || b < 0 || b >= C)
      throw std::invalid_argument("weighted_kappa: category out of range");
    O[static_cast<size_t>(a) * C + b] += 1.0 / n;
  }
  std::vector<double> p(C, 0.0), q(C, 0.0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      p[i] += O[static_cast<size_t>(i) * C + j];
      q[j] += O[static_cast<size_t>(i) * C + j];
    }
  auto w = [C](int i, int j) {
    return 1.0 - std::abs(i - j) / static_cast<double>(C - 1);
  };
  double po = 0, pe = 0;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      po += w(i, j) * O[static_cast<size_t>(i) * C + j];
      pe += w(i, j) * p[i] * q[j];
    }

  KappaResult r;
  if (1.0 - pe < 1e-12) {
    // Both raters stuck to one category: agreement is trivially perfect or not.
    r.kappa = po >= 1.0 - 1e-12 ? 1.0 : 0.0;
    r.ci_low = r.ci_high = r.kappa;
    return r;
  }
  r.kappa = (po - pe) / (1.0 - pe);

  // Large-sample variance of weighted kappa (Fleiss, Cohen & Everitt).
  std::vector<double> wi(C, 0.0), wj(C, 0.0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      wi[i] += q[j] * w(i, j);
      wj[j] += p[i] * w(i, j);
    }
  double s = 0;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      double t = w(i, j) - (wi[i] + wj[j]) * (1.0 - r.kappa);
      s += O[static_cast<size_t>(i) * C + j] * t * t;
    }
  double t2 = r.kappa - pe * (1.0 - r.kappa);
  double var = (s - t2 * t2) / (n * (1.0 - pe) * (1.0 - pe));
  if (var < 0) var = 0;
  double se = std::sqrt(var);
  boost::math::normal_distribution<double> norm;
  double z = boost::math::quantile(norm, 0.975);
  r.ci_low = r.kappa - z * se;
  r.ci_high = r.kappa + z * se;
  return r;
}

}  // namespace cacdec::stats
