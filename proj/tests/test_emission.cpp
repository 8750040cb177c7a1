#include "catch_amalgamated.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <random>

#include "ccssix/emission.hpp"
#include "helpers.hpp"

using namespace ccssix;

namespace {

double empirical_crps(const PredictiveDistribution& d, double y, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = sample(d, rng);
  std::sort(x.begin(), x.end());
  // E|X-y| - 0.5 E|X-X'| with the sorted-sample identity for the pair term
  double a = 0.0, b = 0.0;
  for (int i = 0; i < n; ++i) {
    a += std::fabs(x[static_cast<std::size_t>(i)] - y);
    b += x[static_cast<std::size_t>(i)] * (2.0 * i - n + 1);
  }
  return a / n - b / (static_cast<double>(n) * n);
}

// Integral of (F(x) - 1{x >= y})^2 by quadrature on each side of y and 0.
double quadrature_crps(const PredictiveDistribution& d, double y) {
  boost::math::quadrature::tanh_sinh<double> q;
  auto f = [&](double x) {
    const double F = cdf(d, x) - (x >= y ? 1.0 : 0.0);
    return F * F;
  };
  std::vector<double> pts{y};
  if (d.hurdle && std::fabs(y) > 0.0) pts.push_back(0.0);
  std::sort(pts.begin(), pts.end());
  double s = q.integrate(f, -std::numeric_limits<double>::infinity(), pts.front());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) s += q.integrate(f, pts[i], pts[i + 1]);
  s += q.integrate(f, pts.back(), std::numeric_limits<double>::infinity());
  return s;
}

}  // namespace

TEST_CASE("hurdle disabled gives the pure Student-t likelihood") {
  PredictiveDistribution t{0.3, 1.2, 5.0, 1.0, false};
  PredictiveDistribution h{0.3, 1.2, 5.0, 1.0, true};
  for (double y : {0.01, 0.5, 2.0})
    CHECK(log_likelihood(h, y) == Catch::Approx(log_likelihood(t, y)).margin(1e-12));
  // direct density check
  const double y = 0.9, z = (y - 0.3) / 1.2, nu = 5.0;
  const double logpdf = std::lgamma(3.0) - std::lgamma(2.5) - 0.5 * std::log(nu * M_PI) - std::log(1.2) -
                        3.0 * std::log1p(z * z / nu);
  CHECK(log_likelihood(t, y) == Catch::Approx(logpdf));
}

TEST_CASE("large degrees of freedom approach the Gaussian NLL") {
  PredictiveDistribution t{-0.4, 0.8, 1e6, 1.0, false};
  boost::math::normal n(-0.4, 0.8);
  for (double y : {-2.0, -0.4, 0.5, 1.5})
    CHECK(std::fabs(-log_likelihood(t, y) + std::log(boost::math::pdf(n, y))) < 1e-3);
}

TEST_CASE("hurdle point mass below the threshold") {
  PredictiveDistribution d{0.05, 0.02, 4.0, 0.7, true, 0.001};
  CHECK(log_likelihood(d, 0.0) == Catch::Approx(std::log(0.3)));
  CHECK(log_likelihood(d, 0.0005) == Catch::Approx(std::log(0.3)));
  CHECK(log_likelihood(d, 0.04) == Catch::Approx(std::log(0.7) + student_t_logpdf(0.04, 0.05, 0.02, 4.0)));
  CHECK(d.mean() == Catch::Approx(0.035));
}

TEST_CASE("masked entries contribute nothing") {
  std::vector<PredictiveDistribution> d{{0.0, 1.0, 5.0}, {1.0, 2.0, 5.0}};
  std::vector<double> y{10.0, 1.0};
  std::vector<std::uint8_t> m{0, 1};
  CHECK(log_likelihood(d, y, m) == Catch::Approx(log_likelihood(d[1], 1.0)));
  std::vector<std::uint8_t> none{0, 0};
  CHECK(log_likelihood(d, y, none) == 0.0);
}

TEST_CASE("invalid head parameters are rejected") {
  CHECK_THROWS_AS(log_likelihood(PredictiveDistribution{0.0, 0.0, 5.0}, 0.0), ParameterError);
  CHECK_THROWS_AS(log_likelihood(PredictiveDistribution{0.0, 1.0, 2.0}, 0.0), ParameterError);
  CHECK_THROWS_AS(crps(PredictiveDistribution{0.0, 1.0, 5.0, 1.5, true}, 0.0), ParameterError);
  CHECK_THROWS_AS(quantile(PredictiveDistribution{0.0, 1.0, 5.0}, 1.0), ParameterError);
}

TEST_CASE("closed-form CRPS agrees with Monte Carlo and quadrature") {
  std::vector<PredictiveDistribution> cases{
      {0.0, 1.0, 5.0, 1.0, false}, {1.5, 0.5, 3.0, 1.0, false}, {0.4, 0.8, 6.0, 0.6, true}, {-0.2, 1.1, 2.5, 0.9, true}};
  std::uint64_t seed = 1;
  for (const auto& d : cases)
    for (double y : {-1.0, 0.0, 0.3, 2.0}) {
      const double cf = crps(d, y);
      INFO("loc " << d.loc << " y " << y);
      CHECK(std::fabs(cf - empirical_crps(d, y, 100000, seed++)) < 1e-2);
      CHECK(cf == Catch::Approx(quadrature_crps(d, y)).margin(1e-7));
    }
}

TEST_CASE("sample mean matches the analytic mean") {
  std::vector<PredictiveDistribution> cases{{0.5, 1.0, 6.0, 1.0, false}, {0.04, 0.01, 5.0, 0.6, true}};
  std::mt19937_64 rng(11);
  for (const auto& d : cases) {
    const int n = 100000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += sample(d, rng);
    const double se = std::sqrt(d.variance() / n);
    CHECK(std::fabs(s / n - d.mean()) < 3.0 * se);
  }
}

TEST_CASE("quantile inverts the mixture cdf") {
  PredictiveDistribution d{0.3, 0.4, 5.0, 0.8, true};
  for (double q : {0.01, 0.05, 0.2, 0.25, 0.5, 0.9, 0.99}) {
    const double x = quantile(d, q);
    CHECK(cdf(d, x) >= q - 1e-9);
    CHECK(cdf(d, x - 1e-7) <= q + 1e-9);
  }
  PredictiveDistribution t{1.0, 2.0, 4.0};
  CHECK(quantile(t, 0.5) == Catch::Approx(1.0));
}

TEST_CASE("model emission maps latent state to raw units") {
  auto mp = init_params(testutil::small_dims(2, 1, 1), ModelConfig{}, 1);
  mp.obs_scale = Standardizer{{10.0, -1.0}, {2.0, 0.5}};
  std::vector<double> z{1.0, -2.0, 0.0, 0.0};
  auto d = emit(mp, z);
  CHECK(d[0].loc == Catch::Approx(12.0));
  CHECK(d[1].loc == Catch::Approx(-2.0));
  CHECK(d[0].scale == Catch::Approx((0.3 + 1e-3) * 2.0));
  CHECK(d[0].nu > 2.0);
  CHECK_THROWS_AS(emit(mp, std::vector<double>{1.0}), ShapeError);
}
