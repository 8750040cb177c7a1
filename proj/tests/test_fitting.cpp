#include <cmath>
#include <random>

#include "catch_amalgamated.hpp"
#include "ccssix/fitting.hpp"
#include "ccssix/plant.hpp"
#include "helpers.hpp"

using namespace ccssix;
using Catch::Approx;

namespace {

// Model fitted to nothing yet, scaled to the synthetic 2-D system, with
// parameters perturbed away from the initialization.
ModelParams lpv_params(const SeriesBlock& data, std::uint64_t seed, Variant v) {
  ModelDims d;
  d.n_obs = data.n_obs;
  d.n_u = data.n_u;
  d.n_w = data.n_w;
  ModelConfig cfg;
  cfg.variant = v;
  auto mp = init_params(d, cfg, seed);
  set_scales(mp, data, Range{0, data.length()});
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& x : mp.theta) x += n(rng);
  return mp;
}

}  // namespace

TEST_CASE("analytic loss gradients match central differences") {
  LpvSystem sys;
  const auto data = generate_lpv_series(sys, 200, 3);
  const Variant variants[] = {Variant::Static, Variant::Adaptive, Variant::AdaptiveResidual};
  int points = 0;
  double worst = 0.0;
  for (int point = 0; point < 21; ++point) {
    auto mp = lpv_params(data, 100 + static_cast<std::uint64_t>(point), variants[point % 3]);
    std::vector<Window> batch{make_window(mp, data, 40 + static_cast<std::size_t>(point) * 5, 24, 10),
                              make_window(mp, data, 120 + static_cast<std::size_t>(point) * 3, 24, 10)};
    std::vector<double> g;
    loss_and_gradient(mp, mp.theta, batch, 1e-3, 4, g, 37.0);
    auto f = [&](const std::vector<double>& th) {
      double s = 0.0;
      for (const auto& w : batch) s += window_loss<double>(mp, std::span<const double>(th), w, 1e-3, 4);
      return s / 37.0;
    };
    std::mt19937_64 rng(900 + static_cast<std::uint64_t>(point));
    std::uniform_int_distribution<std::size_t> pick(0, mp.theta.size() - 1);
    const auto mask = mp.layout.trainable_mask(mp.config.variant);
    int checked = 0;
    for (int trial = 0; trial < 400 && checked < 12; ++trial) {
      const auto i = pick(rng);
      if (mask[i] == 0.0) continue;
      auto th = mp.theta;
      const double h = 1e-5;
      th[i] = mp.theta[i] + h;
      const double fp = f(th);
      th[i] = mp.theta[i] - h;
      const double fm = f(th);
      const double fd = (fp - fm) / (2.0 * h);
      const double rel = std::fabs(fd - g[i]) / std::max({std::fabs(fd), std::fabs(g[i]), 1e-3});
      worst = std::max(worst, rel);
      CHECK(rel < 1e-4);
      ++checked;
    }
    CHECK(checked == 12);
    ++points;
  }
  CHECK(points >= 20);
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("fully masked window leaves only the semigroup penalty") {
  LpvSystem sys;
  const auto data = generate_lpv_series(sys, 120, 5);
  auto mp = lpv_params(data, 1, Variant::Adaptive);
  auto w = make_window(mp, data, 40, 24, 12);
  std::fill(w.mask.begin(), w.mask.end(), 0);
  LossParts parts;
  const double l = loss(mp, w, 0.5, 4, &parts);
  CHECK(parts.n_observed == 0);
  CHECK(parts.nll == 0.0);
  CHECK(parts.penalty > 0.0);
  CHECK(l == Approx(0.5 * parts.penalty).epsilon(1e-12));
  CHECK(loss(mp, w, 0.0) == 0.0);
}

TEST_CASE("adaptive variant at zero modulation reproduces the static loss") {
  LpvSystem sys;
  const auto data = generate_lpv_series(sys, 150, 8);
  auto ad = lpv_params(data, 4, Variant::Adaptive);
  for (const auto& b : ad.layout.blocks())
    if (b.kind == BlockKind::Adaptive)
      std::fill(ad.theta.begin() + static_cast<std::ptrdiff_t>(b.offset),
                ad.theta.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()), 0.0);
  auto st = ad;
  st.config.variant = Variant::Static;
  for (std::size_t s : {40u, 77u, 120u}) {
    const auto w = make_window(ad, data, s, 24, 16);
    CHECK(loss(ad, w, 1e-3) == loss(st, w, 1e-3));
  }
}

TEST_CASE("fitting is deterministic per seed and seeds differ") {
  LpvSystem sys;
  const auto data = generate_lpv_series(sys, 400, 2);
  const auto split = SplitSpec::fractions(data.length(), 0.6, 0.2);
  FitConfig cfg;
  cfg.epochs = 2;
  cfg.max_windows_per_epoch = 32;
  cfg.history_length = 16;
  cfg.window_length = 8;
  const auto a = fit(data, split, cfg, 7);
  const auto b = fit(data, split, cfg, 7);
  const auto c = fit(data, split, cfg, 11);
  CHECK(a.params.theta == b.params.theta);
  CHECK(a.log.size() == 2);
  CHECK(a.log[0].loss == b.log[0].loss);
  CHECK(a.params.theta != c.params.theta);
  CHECK(std::isfinite(a.log.back().loss));
  // the static variant never moves its frozen blocks
  cfg.variant = Variant::Static;
  const auto s = fit(data, split, cfg, 7);
  const auto init = init_params(s.params.dims, s.params.config, 7);
  const auto mask = s.params.layout.trainable_mask(Variant::Static);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] == 0.0) REQUIRE(s.params.theta[i] == init.theta[i]);
}

TEST_CASE("split and config validation") {
  SplitSpec bad{{0, 50}, {40, 60}, {60, 100}};
  CHECK_THROWS_AS(bad.validate(100), ConfigError);
  CHECK_NOTHROW(SplitSpec::fractions(100, 0.6, 0.2).validate(100));
  FitConfig cfg;
  cfg.seeds.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.seeds = {1};
  cfg.semigroup_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("paired bootstrap comparison") {
  const std::vector<double> a{0.31, 0.29, 0.35, 0.30, 0.28, 0.33, 0.36, 0.27, 0.32, 0.30};
  auto same = paired_compare(a, a);
  CHECK(same.mean_diff == 0.0);
  CHECK(same.lo == 0.0);
  CHECK(same.hi == 0.0);
  std::vector<double> b = a;
  for (auto& x : b) x -= 0.05;
  auto off = paired_compare(a, b);
  CHECK(off.mean_diff == Approx(0.05));
  CHECK(off.lo == Approx(0.05).epsilon(1e-9));
  CHECK(off.hi == Approx(0.05).epsilon(1e-9));

  // seeded reference resampler: same draws, percentile with interpolation
  const std::vector<double> c{0.12, 0.40, 0.22, 0.31, 0.05, 0.27, 0.19, 0.33, 0.08, 0.25};
  const int R = 20000;
  auto got = paired_compare(a, c, R, 42);
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> pick(0, 9);
  std::vector<double> means;
  for (int r = 0; r < R; ++r) {
    double s = 0.0;
    for (int i = 0; i < 10; ++i) {
      const auto j = pick(rng);
      s += a[j] - c[j];
    }
    means.push_back(s / 10.0);
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double p) {
    const double pos = p * (R - 1);
    const auto i = static_cast<std::size_t>(pos);
    return means[i] + (pos - static_cast<double>(i)) * (means[i + 1] - means[i]);
  };
  CHECK(got.lo == Approx(q(0.025)).epsilon(1e-12));
  CHECK(got.hi == Approx(q(0.975)).epsilon(1e-12));
  CHECK(got.lo <= got.mean_diff);
  CHECK(got.mean_diff <= got.hi);
  CHECK_THROWS(paired_compare(a, std::vector<double>{1.0}));
}
