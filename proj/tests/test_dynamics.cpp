#include "catch_amalgamated.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "ccssix/dynamics.hpp"
#include "helpers.hpp"

using namespace ccssix;

namespace {

Eigen::MatrixXd as_eigen(std::span<const double> v, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  return m;
}

Eigen::VectorXd as_vec(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Linear interpolation written independently of the library.
double interp(std::span<const double> knots, double x) {
  const int n = static_cast<int>(knots.size());
  const double lo = -3.0, hi = 3.0, h = (hi - lo) / (n - 1);
  if (x <= lo) return knots[0];
  if (x >= hi) return knots[static_cast<std::size_t>(n - 1)];
  for (int i = 0; i + 1 < n; ++i) {
    const double a = lo + i * h, b = a + h;
    if (x >= a && x <= b) return knots[static_cast<std::size_t>(i)] + (x - a) / h * (knots[static_cast<std::size_t>(i + 1)] - knots[static_cast<std::size_t>(i)]);
  }
  return knots[static_cast<std::size_t>(n - 1)];
}

std::vector<double> randvec(std::mt19937_64& rng, int n, double s = 1.0) {
  std::normal_distribution<double> d(0.0, s);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("static update: zero inputs leave only the bias") {
  auto mp = init_params(testutil::small_dims(), ModelConfig{}, 3);
  auto d0 = mp.block("d0", 1);
  for (std::size_t i = 0; i < d0.size(); ++i) d0[i] = 0.1 * static_cast<double>(i + 1);
  const int dz = mp.dims.dz();
  std::vector<double> z(static_cast<std::size_t>(dz), 0.0), u(1, 0.0), w(1, 0.0);
  auto c = static_update(mp, 1, z, u, w);
  for (int i = 0; i < dz; ++i) CHECK(c.total[static_cast<std::size_t>(i)] == d0[static_cast<std::size_t>(i)]);
}

TEST_CASE("static update: pure state channel") {
  auto mp = init_params(testutil::small_dims(), ModelConfig{}, 4);
  for (auto& x : mp.block("d0", 0)) x = 0.0;
  for (auto& x : mp.block("shape_loading", 0)) x = 0.0;
  std::mt19937_64 rng(1);
  auto z = randvec(rng, mp.dims.dz());
  std::vector<double> u(1, 0.0), w(1, 0.0);
  auto c = static_update(mp, 0, z, u, w);
  Eigen::VectorXd expect = as_eigen(mp.block("A0", 0), mp.dims.dz(), mp.dims.dz()) * as_vec(z);
  for (int i = 0; i < mp.dims.dz(); ++i) CHECK(c.total[static_cast<std::size_t>(i)] == Catch::Approx(expect(i)).margin(1e-14));
}

TEST_CASE("static update matches brute-force matrix arithmetic") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto mp = testutil::random_params(testutil::small_dims(2, 1, 1), seed, 0.5);
    const auto& d = mp.dims;
    const int dz = d.dz();
    std::mt19937_64 rng(seed);
    auto z = randvec(rng, dz, 1.5), u = randvec(rng, d.n_u, 1.5), w = randvec(rng, d.n_w, 1.5);
    const int k = static_cast<int>(seed % 3);
    auto c = static_update(mp, k, z, u, w);

    Eigen::VectorXd st = as_eigen(mp.block("A0", k), dz, dz) * as_vec(z);
    Eigen::VectorXd ct = as_eigen(mp.block("B0", k), dz, d.n_u) * as_vec(u);
    Eigen::VectorXd dt = as_eigen(mp.block("E0", k), dz, d.n_w) * as_vec(w);
    Eigen::VectorXd add = Eigen::VectorXd::Zero(dz);
    auto knots = mp.block("shape_knots", k);
    auto load = as_eigen(mp.block("shape_loading", k), d.n_shape(), dz);
    std::vector<double> x = z;
    x.insert(x.end(), u.begin(), u.end());
    x.insert(x.end(), w.begin(), w.end());
    for (int v = 0; v < d.n_shape(); ++v)
      add += load.row(v).transpose() * interp(knots.subspan(static_cast<std::size_t>(v * d.n_knots), static_cast<std::size_t>(d.n_knots)), x[static_cast<std::size_t>(v)]);
    Eigen::VectorXd total = st + ct + dt + as_vec(mp.block("d0", k)) + add;
    for (int i = 0; i < dz; ++i) {
      CHECK(c.state[static_cast<std::size_t>(i)] == Catch::Approx(st(i)).margin(1e-12));
      CHECK(c.control[static_cast<std::size_t>(i)] == Catch::Approx(ct(i)).margin(1e-12));
      CHECK(c.disturbance[static_cast<std::size_t>(i)] == Catch::Approx(dt(i)).margin(1e-12));
      CHECK(c.additive[static_cast<std::size_t>(i)] == Catch::Approx(add(i)).margin(1e-12));
      CHECK(c.residual[static_cast<std::size_t>(i)] == 0.0);
      CHECK(c.total[static_cast<std::size_t>(i)] == Catch::Approx(total(i)).margin(1e-12));
    }
  }
}

TEST_CASE("updates reject bad shapes and non-finite inputs") {
  auto mp = init_params(testutil::small_dims(), ModelConfig{}, 1);
  std::vector<double> z(static_cast<std::size_t>(mp.dims.dz()), 0.0), u(1, 0.0), w(1, 0.0), bad(3, 0.0);
  CHECK_THROWS_AS(static_update(mp, 0, bad, u, w), ShapeError);
  CHECK_THROWS_AS(static_update(mp, 0, z, bad, w), ShapeError);
  std::vector<double> g(static_cast<std::size_t>(mp.dims.d_gamma()), 0.0);
  CHECK_THROWS_AS(adaptive_update(mp, 0, z, u, w, bad), ShapeError);
  z[0] = std::nan("");
  CHECK_THROWS_AS(static_update(mp, 0, z, u, w), NumericError);
  z[0] = 0.0;
  g[2] = INFINITY;
  CHECK_THROWS_AS(adaptive_update(mp, 0, z, u, w, g), NumericError);
}

TEST_CASE("modulated matrix") {
  std::mt19937_64 rng(9);
  Matrix base(3, 3, randvec(rng, 9));
  SECTION("zero coefficients give the base") {
    std::vector<Matrix> deltas{Matrix(3, 3, randvec(rng, 9)), Matrix(3, 3, randvec(rng, 9))};
    std::vector<double> c{0.0, 0.0};
    CHECK(modulated_matrix(base, deltas, c).data == base.data);
  }
  SECTION("single delta cancels the base") {
    Matrix neg = base;
    for (auto& x : neg.data) x = -x;
    std::vector<Matrix> deltas{neg};
    std::vector<double> c{1.0};
    for (double x : modulated_matrix(base, deltas, c).data) CHECK(x == 0.0);
  }
  SECTION("rank four matches a naive loop") {
    std::vector<Matrix> deltas;
    for (int r = 0; r < 4; ++r) deltas.emplace_back(3, 3, randvec(rng, 9));
    auto c = randvec(rng, 4);
    auto m = modulated_matrix(base, deltas, c);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = base(i, j);
        for (int r = 0; r < 4; ++r) s += c[static_cast<std::size_t>(r)] * deltas[static_cast<std::size_t>(r)](i, j);
        CHECK(m(i, j) == Catch::Approx(s).margin(1e-14));
      }
  }
  SECTION("length mismatch") {
    std::vector<Matrix> deltas{base};
    std::vector<double> c{1.0, 2.0};
    CHECK_THROWS_AS(modulated_matrix(base, deltas, c), ShapeError);
    std::vector<Matrix> wrong{Matrix(2, 3)};
    std::vector<double> c1{1.0};
    CHECK_THROWS_AS(modulated_matrix(base, wrong, c1), ShapeError);
  }
}

TEST_CASE("adaptive update with zero modulation reduces to static exactly") {
  auto mp = testutil::random_params(testutil::small_dims(3, 2, 1), 17, 0.4);
  for (const char* name : {"coefA_W", "coefA_b", "coefB_W", "coefB_b", "coefE_W", "coefE_b", "bias_W", "shape_scale_W",
                           "shape_scale_b", "shape_offset_W", "shape_offset_b"})
    for (int k = 0; k < 3; ++k)
      for (auto& x : mp.block(name, k)) x = 0.0;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto z = randvec(rng, mp.dims.dz()), u = randvec(rng, 2), w = randvec(rng, 1);
    auto g = randvec(rng, mp.dims.d_gamma());
    for (int k = 0; k < 3; ++k) {
      auto a = adaptive_update(mp, k, z, u, w, g);
      auto s = static_update(mp, k, z, u, w);
      CHECK(a.total == s.total);
      CHECK(a.state == s.state);
      CHECK(a.additive == s.additive);
    }
  }
}

TEST_CASE("adaptive update composes modulated matrices") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto mp = testutil::random_params(testutil::small_dims(2, 1, 2), seed, 0.3);
    const auto& d = mp.dims;
    const int dz = d.dz(), dg = d.d_gamma(), R = d.R;
    std::mt19937_64 rng(seed + 50);
    auto z = randvec(rng, dz), u = randvec(rng, d.n_u), w = randvec(rng, d.n_w), g = randvec(rng, dg);
    const int k = static_cast<int>(seed % 3);
    auto c = adaptive_update(mp, k, z, u, w, g);

    auto mod = [&](const char* base, const char* delta, const char* W, const char* b, int cols) {
      std::vector<Matrix> deltas;
      auto dl = mp.block(delta, k);
      for (int r = 0; r < R; ++r)
        deltas.emplace_back(dz, cols, std::vector<double>(dl.begin() + r * dz * cols, dl.begin() + (r + 1) * dz * cols));
      Eigen::VectorXd coeff = (as_eigen(mp.block(W, k), R, dg) * as_vec(g) + as_vec(mp.block(b, k))).array().tanh();
      std::vector<double> cv(coeff.data(), coeff.data() + R);
      auto bb = mp.block(base, k);
      return modulated_matrix(Matrix(dz, cols, std::vector<double>(bb.begin(), bb.end())), deltas, cv);
    };
    auto A = mod("A0", "dA", "coefA_W", "coefA_b", dz);
    auto B = mod("B0", "dB", "coefB_W", "coefB_b", d.n_u);
    auto E = mod("E0", "dE", "coefE_W", "coefE_b", d.n_w);
    auto Az = matvec(A, z), Bu = matvec(B, u), Ew = matvec(E, w);
    Eigen::VectorXd bias = as_vec(mp.block("d0", k)) + as_eigen(mp.block("bias_W", k), dz, dg) * as_vec(g);
    auto mm = modulated_matrices(mp, k, g);
    for (int i = 0; i < dz; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      CHECK(c.state[ii] == Catch::Approx(Az[ii]).margin(1e-12));
      CHECK(c.control[ii] == Catch::Approx(Bu[ii]).margin(1e-12));
      CHECK(c.disturbance[ii] == Catch::Approx(Ew[ii]).margin(1e-12));
      CHECK(c.bias[ii] == Catch::Approx(bias(i)).margin(1e-12));
      CHECK(c.residual[ii] == 0.0);
      double sum = c.state[ii] + c.control[ii] + c.disturbance[ii] + c.bias[ii] + c.additive[ii] + c.residual[ii];
      CHECK(std::fabs(sum - c.total[ii]) <= 1e-9);
    }
    for (std::size_t i = 0; i < A.data.size(); ++i) CHECK(mm.A.data[i] == Catch::Approx(A.data[i]).margin(1e-14));
  }
}

TEST_CASE("residual channel only with a positive gate") {
  auto mp = testutil::random_params(testutil::small_dims(), 5, 0.5, Variant::AdaptiveResidual);
  std::mt19937_64 rng(3);
  auto z = randvec(rng, mp.dims.dz()), u = randvec(rng, 1), w = randvec(rng, 1), g = randvec(rng, mp.dims.d_gamma());
  mp.config.alpha = 0.0;
  for (double x : adaptive_update(mp, 0, z, u, w, g).residual) CHECK(x == 0.0);
  mp.config.alpha = 0.2;
  auto c = adaptive_update(mp, 0, z, u, w, g);
  double mag = 0.0;
  for (double x : c.residual) {
    mag += std::fabs(x);
    CHECK(std::fabs(x) <= 0.2);
  }
  CHECK(mag > 0.0);
}

TEST_CASE("routing") {
  SECTION("no stickiness and uniform logits give uniform probabilities") {
    GateState prev{{0.2, 0.5, 0.3}, 0.0};
    std::vector<double> l{0.7, 0.7, 0.7};
    for (double p : route_logits(prev, l).probs) CHECK(p == Catch::Approx(1.0 / 3.0));
  }
  SECTION("large stickiness concentrates on the previous argmax") {
    GateState prev{{0.1, 0.2, 0.7}, 60.0};
    std::vector<double> l{3.0, 1.0, -2.0};
    auto g = route_logits(prev, l);
    CHECK(g.probs[2] > 1.0 - 1e-12);
    CHECK(g.argmax() == 2);
  }
  SECTION("closed-form softmax") {
    GateState prev{{0.2, 0.6, 0.2}, 2.0};
    std::vector<double> l{1.0, 1.0, 1.0};
    auto g = route_logits(prev, l);
    const double den = 2.0 * std::exp(1.0) + std::exp(3.0);
    CHECK(g.probs[0] == Catch::Approx(std::exp(1.0) / den));
    CHECK(g.probs[1] == Catch::Approx(std::exp(3.0) / den));
    CHECK(g.probs[2] == Catch::Approx(std::exp(1.0) / den));
  }
  SECTION("model gate on random features stays on the simplex") {
    auto mp = testutil::random_params(testutil::small_dims(), 8, 1.0);
    std::mt19937_64 rng(4);
    GateState g{{1.0 / 3, 1.0 / 3, 1.0 / 3}, 1.5};
    for (int t = 0; t < 200; ++t) {
      g = route(mp, g, randvec(rng, mp.dims.n_route(), 3.0));
      double s = 0.0;
      for (double p : g.probs) {
        CHECK(p >= 0.0);
        s += p;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-9);
    }
    CHECK_THROWS_AS(route(mp, g, std::vector<double>(3, 0.0)), ShapeError);
  }
}

TEST_CASE("expected dwell time is nondecreasing in stickiness") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0.0, 1.0);
  double prev_dwell = 0.0;
  for (double kappa : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    double total = 0.0;
    const int trials = 10000;
    for (int trial = 0; trial < trials; ++trial) {
      GateState g{{1.0, 0.0, 0.0}, kappa};
      int steps = 0;
      const int start = 0;
      while (steps < 1000) {
        std::vector<double> l{noise(rng), noise(rng), noise(rng)};
        g = route_logits(g, l);
        ++steps;
        if (g.argmax() != start) break;
      }
      total += steps;
    }
    const double dwell = total / trials;
    INFO("kappa " << kappa << " dwell " << dwell);
    CHECK(dwell >= prev_dwell);
    prev_dwell = dwell;
  }
}
