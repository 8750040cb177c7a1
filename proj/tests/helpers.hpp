#pragma once

#include <random>
#include <vector>

#include "ccssix/model.hpp"
#include "ccssix/series.hpp"

namespace testutil {

inline ccssix::ModelDims small_dims(int n_obs = 2, int n_u = 1, int n_w = 1) {
  ccssix::ModelDims d;
  d.n_obs = n_obs;
  d.n_u = n_u;
  d.n_w = n_w;
  return d;
}

// Every parameter drawn at `scale`, with a valid output head.
inline ccssix::ModelParams random_params(const ccssix::ModelDims& d, std::uint64_t seed, double scale = 0.1,
                                         ccssix::Variant v = ccssix::Variant::Adaptive) {
  ccssix::ModelConfig cfg;
  cfg.variant = v;
  auto mp = ccssix::init_params(d, cfg, seed);
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : mp.theta) x = n(rng);
  for (auto& x : mp.block("head_nu")) x = 1.0;
  return mp;
}

inline ccssix::SeriesBlock random_series(int n_obs, int n_u, int n_w, std::size_t len, std::uint64_t seed,
                                         double missing = 0.1) {
  ccssix::SeriesBlock b(n_obs, n_u, n_w, len);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t t = 0; t < len; ++t) {
    for (int i = 0; i < n_obs; ++i) {
      b.y(t, i) = n(rng);
      b.m(t, i) = unif(rng) >= missing;
    }
    for (int i = 0; i < n_u; ++i) b.uc(t, i) = n(rng);
    for (int i = 0; i < n_w; ++i) b.wd(t, i) = n(rng);
    b.dt[t] = unif(rng) < 0.8 ? 1.0 : 2.0;
  }
  return b;
}

inline ccssix::ScenarioInputs random_inputs(int n_u, int n_w, int H, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ccssix::ScenarioInputs in;
  in.n_u = n_u;
  in.n_w = n_w;
  for (int t = 0; t < H; ++t) {
    for (int i = 0; i < n_u; ++i) in.u.push_back(n(rng));
    for (int i = 0; i < n_w; ++i) in.w.push_back(n(rng));
    in.dt.push_back(t % 5 == 4 ? 2.0 : 1.0);
  }
  return in;
}

}  // namespace testutil
