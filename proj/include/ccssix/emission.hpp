// Hurdle-Student-t output head.
//
// Each observed variable is emitted as a Student-t in raw units; hurdle
// variables mix it with a point mass at zero that represents readings below
// the hurdle threshold.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "ccssix/ad.hpp"
#include "ccssix/model.hpp"

namespace ccssix {

struct PredictiveDistribution {
  double loc = 0.0;
  double scale = 1.0;
  double nu = 5.0;
  double p = 1.0;  // probability of the continuous component
  bool hurdle = false;
  double threshold = 0.001;

  void validate() const {
    if (!(scale > 0.0) || !(nu > 2.0) || !(p >= 0.0 && p <= 1.0) || !std::isfinite(loc))
      throw ParameterError("invalid predictive head parameters");
  }

  double mean() const { return hurdle ? p * loc : loc; }
  double variance() const {
    const double vt = scale * scale * nu / (nu - 2.0);
    if (!hurdle) return vt;
    const double m = p * loc;
    return p * (vt + loc * loc) - m * m;
  }
};

/// Standardized Student-t log density, templated for differentiation.
template <class T>
T student_t_logpdf(const T& y, const T& loc, const T& scale, const T& nu) {
  const T z = (y - loc) / scale;
  return lgamma((nu + 1.0) * 0.5) - lgamma(nu * 0.5) - 0.5 * log(nu * std::numbers::pi) - log(scale) -
         (nu + 1.0) * 0.5 * log1p(z * z / nu);
}

inline double student_t_logpdf(double y, double loc, double scale, double nu) {
  return student_t_logpdf<double>(y, loc, scale, nu);
}

/// Log-likelihood of one raw observation; masked entries contribute zero.
inline double log_likelihood(const PredictiveDistribution& d, double y, bool observed = true) {
  if (!observed) return 0.0;
  d.validate();
  if (d.hurdle) {
    if (y < d.threshold) return std::log(1.0 - d.p);
    return std::log(d.p) + student_t_logpdf(y, d.loc, d.scale, d.nu);
  }
  return student_t_logpdf(y, d.loc, d.scale, d.nu);
}

inline double log_likelihood(std::span<const PredictiveDistribution> d, std::span<const double> y,
                             std::span<const std::uint8_t> mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += log_likelihood(d[i], y[i], mask[i] != 0);
  return s;
}

inline double cdf(const PredictiveDistribution& d, double x) {
  d.validate();
  boost::math::students_t t(d.nu);
  const double F = boost::math::cdf(t, (x - d.loc) / d.scale);
  if (!d.hurdle) return F;
  return (x >= 0.0 ? 1.0 - d.p : 0.0) + d.p * F;
}

/// Smallest x with cdf(x) >= q.
inline double quantile(const PredictiveDistribution& d, double q) {
  d.validate();
  if (!(q > 0.0 && q < 1.0)) throw ParameterError("quantile level must lie in (0, 1)");
  boost::math::students_t t(d.nu);
  auto tq = [&](double level) { return d.loc + d.scale * boost::math::quantile(t, std::clamp(level, 1e-300, 1.0 - 1e-16)); };
  if (!d.hurdle || d.p >= 1.0) return tq(q);
  const double below_zero = d.p * boost::math::cdf(t, -d.loc / d.scale);
  if (q <= below_zero) return tq(q / d.p);
  if (q <= below_zero + (1.0 - d.p)) return 0.0;
  if (d.p <= 0.0) return 0.0;
  return tq((q - (1.0 - d.p)) / d.p);
}

/// Continuous ranked probability score in closed form:
/// CRPS = E|X - y| - E|X - X'| / 2 for the point-mass/Student-t mixture.
inline double crps(const PredictiveDistribution& d, double y) {
  d.validate();
  const double nu = d.nu, s = d.scale;
  boost::math::students_t t(nu);
  auto abs_dev = [&](double target) {  // E|T - target|
    const double z = (target - d.loc) / s;
    const double F = boost::math::cdf(t, z), f = boost::math::pdf(t, z);
    return s * (z * (2.0 * F - 1.0) + 2.0 * f * (nu + z * z) / (nu - 1.0));
  };
  const double b = boost::math::beta(0.5, nu / 2.0);
  const double pair = s * 4.0 * std::sqrt(nu) * boost::math::beta(0.5, nu - 0.5) / ((nu - 1.0) * b * b);  // E|T - T'|
  const double p = d.hurdle ? d.p : 1.0;
  const double e_xy = (1.0 - p) * std::fabs(y) + p * abs_dev(y);
  const double e_xx = 2.0 * p * (1.0 - p) * abs_dev(0.0) + p * p * pair;
  return e_xy - 0.5 * e_xx;
}

template <class Rng>
double sample(const PredictiveDistribution& d, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (d.hurdle && unif(rng) >= d.p) return 0.0;
  std::student_t_distribution<double> t(d.nu);
  return d.loc + d.scale * t(rng);
}

/// Head outputs for all observed variables, standardized units.
template <class T>
struct EmissionT {
  std::vector<T> loc, scale, nu, p;
};

template <class T>
EmissionT<T> emit_t(const ModelParams& mp, std::span<const T> theta, const T* z) {
  const auto& g = mp.layout.global();
  const int no = mp.dims.n_obs, dz = mp.dims.dz();
  EmissionT<T> e;
  e.loc.resize(static_cast<std::size_t>(no));
  e.scale.resize(e.loc.size());
  e.nu.resize(e.loc.size());
  e.p.resize(e.loc.size());
  for (int i = 0; i < no; ++i) {
    T loc = theta[g.loc_b + static_cast<std::size_t>(i)];
    T sc = theta[g.scale_b + static_cast<std::size_t>(i)];
    for (int j = 0; j < dz; ++j) {
      loc = loc + theta[g.loc_W + static_cast<std::size_t>(i * dz + j)] * z[j];
      sc = sc + theta[g.scale_W + static_cast<std::size_t>(i * dz + j)] * z[j];
    }
    e.loc[static_cast<std::size_t>(i)] = loc;
    e.scale[static_cast<std::size_t>(i)] = softplus(sc) + 1e-3;
    e.nu[static_cast<std::size_t>(i)] = softplus(theta[g.nu + static_cast<std::size_t>(i)]) + 2.05;
    if (mp.config.hurdle[static_cast<std::size_t>(i)]) {
      T h = theta[g.hurdle_b + static_cast<std::size_t>(i)];
      for (int j = 0; j < dz; ++j) h = h + theta[g.hurdle_W + static_cast<std::size_t>(i * dz + j)] * z[j];
      e.p[static_cast<std::size_t>(i)] = 1e-6 + (1.0 - 2e-6) * sigmoid(h);
    } else {
      e.p[static_cast<std::size_t>(i)] = T(1.0);
    }
  }
  return e;
}

/// Raw-unit predictive distributions for latent state z.
inline std::vector<PredictiveDistribution> emit(const ModelParams& mp, std::span<const double> z) {
  if (static_cast<int>(z.size()) != mp.dims.dz()) throw ShapeError("emit: latent dimension mismatch");
  const auto e = emit_t<double>(mp, mp.theta, z.data());
  std::vector<PredictiveDistribution> out(e.loc.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].loc = mp.obs_scale.to_raw(i, e.loc[i]);
    out[i].scale = e.scale[i] * mp.obs_scale.sd[i];
    out[i].nu = e.nu[i];
    out[i].p = e.p[i];
    out[i].hurdle = mp.config.hurdle[i];
    out[i].threshold = mp.config.hurdle_threshold;
  }
  return out;
}

/// Negative log-likelihood of standardized observation y (templated; used
/// by the training loss). `zero` marks raw readings under the hurdle.
template <class T>
T emission_nll(const EmissionT<T>& e, std::size_t i, bool hurdle, double y_std, bool zero) {
  if (hurdle) {
    if (zero) return -log(1.0 - e.p[i]);
    return -log(e.p[i]) - student_t_logpdf<T>(T(y_std), e.loc[i], e.scale[i], e.nu[i]);
  }
  return -student_t_logpdf<T>(T(y_std), e.loc[i], e.scale[i], e.nu[i]);
}

}  // namespace ccssix
