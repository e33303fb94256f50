#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <Eigen/Core>

namespace seas::testing {

/// Direct-loop reference implementations of the evaluation metrics.

inline double oracle_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return wins / static_cast<double>(pairs);
}

/// Precision and recall when predicting positive for score >= threshold.
inline std::pair<double, double> oracle_pr(const std::vector<double>& s, const std::vector<int>& y, double threshold) {
  double tp = 0, fp = 0, pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    pos += y[i];
    if (s[i] >= threshold) (y[i] ? tp : fp) += 1;
  }
  return {tp + fp > 0 ? tp / (tp + fp) : 1.0, tp / pos};
}

inline double oracle_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    const auto [p, r] = oracle_pr(s, y, t);
    ap += (r - prev_recall) * p;
    prev_recall = r;
  }
  return ap;
}

/// Best F1 = 2TP / (2TP + FP + FN) over thresholds, compared as exact integer fractions and rounded once.
inline double oracle_f1_max(const std::vector<double>& s, const std::vector<int>& y) {
  long best_num = 0, best_den = 1;
  for (double t : s) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool predicted = s[i] >= t;
      tp += predicted && y[i];
      fp += predicted && !y[i];
      fn += !predicted && y[i];
    }
    const long num = 2 * tp, den = 2 * tp + fp + fn;
    if (den > 0 && num * best_den > best_num * den) best_num = num, best_den = den;
  }
  return static_cast<double>(best_num) / static_cast<double>(best_den);
}

inline double oracle_inception_score(const Eigen::MatrixXd& p) {
  const long n = p.rows(), k = p.cols();
  std::vector<double> marginal(static_cast<std::size_t>(k), 0.0);
  for (long i = 0; i < n; ++i)
    for (long c = 0; c < k; ++c) marginal[static_cast<std::size_t>(c)] += p(i, c) / static_cast<double>(n);
  double kl = 0;
  for (long i = 0; i < n; ++i)
    for (long c = 0; c < k; ++c)
      if (p(i, c) > 0) kl += p(i, c) * (std::log(p(i, c)) - std::log(marginal[static_cast<std::size_t>(c)]));
  return std::exp(kl / static_cast<double>(n));
}

inline double oracle_kid(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int degree = 3, double coef0 = 1.0) {
  const double d = static_cast<double>(x.cols());
  auto k = [&](const Eigen::MatrixXd& a, long i, const Eigen::MatrixXd& b, long j) {
    double dot = 0;
    for (long c = 0; c < a.cols(); ++c) dot += a(i, c) * b(j, c);
    return std::pow(dot / d + coef0, degree);
  };
  const long m = x.rows(), n = y.rows();
  double kxx = 0, kyy = 0, kxy = 0;
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j)
      if (i != j) kxx += k(x, i, x, j);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      if (i != j) kyy += k(y, i, y, j);
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) kxy += k(x, i, y, j);
  return kxx / static_cast<double>(m * (m - 1)) + kyy / static_cast<double>(n * (n - 1)) -
         2 * kxy / static_cast<double>(m * n);
}

}  // namespace seas::testing
