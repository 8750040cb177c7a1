// Reporting statistics: exact binomial intervals and tests, multiple-testing
// control, and forecast scores.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/binomial.hpp>

#include "ccssix/emission.hpp"

namespace ccssix {

/// Exact (Clopper-Pearson) two-sided interval for a binomial proportion.
inline std::pair<double, double> clopper_pearson(int successes, int n, double conf = 0.95) {
  if (n <= 0 || successes < 0 || successes > n) throw std::invalid_argument("clopper_pearson needs 0 <= successes <= n, n > 0");
  if (!(conf > 0.0 && conf < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  const double a = 1.0 - conf;
  const double k = successes, nn = n;
  const double lo = successes == 0 ? 0.0 : boost::math::quantile(boost::math::beta_distribution<>(k, nn - k + 1.0), a / 2.0);
  const double hi = successes == n ? 1.0 : boost::math::quantile(boost::math::beta_distribution<>(k + 1.0, nn - k), 1.0 - a / 2.0);
  return {lo, hi};
}

/// Exact two-sided McNemar test on the discordant counts.
inline double mcnemar_exact(int b01, int b10) {
  if (b01 < 0 || b10 < 0) throw std::invalid_argument("discordant counts must be non-negative");
  const int m = b01 + b10;
  if (m == 0) return 1.0;
  boost::math::binomial_distribution<> bin(m, 0.5);
  return std::min(1.0, 2.0 * boost::math::cdf(bin, std::min(b01, b10)));
}

/// McNemar p-value from marginals only, at the pairing with the most
/// concordance: every success of the smaller count lies inside the larger
/// one, leaving the fewest discordant pairs (|a - b|, all one way). This is
/// not the largest p over all feasible pairings (3 vs 1 of 4: 0.5 here,
/// 0.625 for the (3, 1) split).
inline double mcnemar_worst_case(int prevented_a, int prevented_b, int pool_n) {
  if (pool_n < 0 || prevented_a < 0 || prevented_b < 0 || prevented_a > pool_n || prevented_b > pool_n)
    throw std::invalid_argument("mcnemar_worst_case needs 0 <= a, b <= n");
  return mcnemar_exact(std::abs(prevented_a - prevented_b), 0);
}

/// Holm step-down rejections at family-wise level alpha.
inline std::vector<bool> holm_bonferroni(const std::vector<double>& p, double alpha = 0.01) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<bool> reject(p.size(), false);
  const double m = static_cast<double>(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (p[order[i]] > alpha / (m - static_cast<double>(i))) break;
    reject[order[i]] = true;
  }
  return reject;
}

struct ForecastMetrics {
  double rmse = 0.0, mae = 0.0, r2 = 0.0, crps = 0.0, nll = 0.0;
  int n = 0;
};

/// Point metrics over observed entries; R^2 is 1 - SSE/SST around the mean
/// of the observed truth (NaN when the truth is constant).
inline ForecastMetrics point_metrics(const std::vector<double>& pred, const std::vector<double>& truth,
                                     const std::vector<std::uint8_t>& mask) {
  if (pred.size() != truth.size() || mask.size() != truth.size())
    throw std::invalid_argument("prediction, truth and mask lengths differ");
  ForecastMetrics m;
  double sse = 0.0, sae = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!mask[i]) continue;
    const double e = pred[i] - truth[i];
    sse += e * e;
    sae += std::fabs(e);
    sy += truth[i];
    ++m.n;
  }
  if (m.n == 0) throw std::invalid_argument("no observed entries to score");
  const double mean = sy / m.n;
  double sst = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (mask[i]) sst += (truth[i] - mean) * (truth[i] - mean);
  m.rmse = std::sqrt(sse / m.n);
  m.mae = sae / m.n;
  m.r2 = sst > 0.0 ? 1.0 - sse / sst : std::numeric_limits<double>::quiet_NaN();
  return m;
}

/// Point metrics of the predictive means plus mean CRPS and mean negative
/// log-likelihood of the full predictive distributions.
inline ForecastMetrics forecast_metrics(const std::vector<PredictiveDistribution>& pred, const std::vector<double>& truth,
                                        const std::vector<std::uint8_t>& mask) {
  if (pred.size() != truth.size()) throw std::invalid_argument("prediction and truth lengths differ");
  std::vector<double> mean;
  mean.reserve(pred.size());
  for (const auto& d : pred) mean.push_back(d.mean());
  auto m = point_metrics(mean, truth, mask);
  double c = 0.0, l = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!mask[i]) continue;
    c += crps(pred[i], truth[i]);
    l -= log_likelihood(pred[i], truth[i]);
  }
  m.crps = c / m.n;
  m.nll = l / m.n;
  return m;
}

}  // namespace ccssix
