// Reverse-mode automatic differentiation on a flat tape.
//
// Model code is written once as templates over a scalar type; instantiating
// with `double` gives plain evaluation and with `ad::Var` records every
// operation on the thread's active tape so a single backward sweep yields
// exact gradients of a scalar loss with respect to all leaves.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

namespace ccssix::ad {

class Tape {
 public:
  struct Node {
    std::int32_t a = -1;
    std::int32_t b = -1;
    double da = 0.0;
    double db = 0.0;
  };

  std::int32_t push(std::int32_t a, double da, std::int32_t b = -1, double db = 0.0) {
    nodes_.push_back(Node{a, b, da, db});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  std::int32_t leaf() { return push(-1, 0.0); }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    adjoint_.clear();
  }

  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Propagates d(root)/d(node) into the adjoint array.
  void backward(std::int32_t root) {
    adjoint_.assign(nodes_.size(), 0.0);
    if (root < 0) return;
    adjoint_[static_cast<std::size_t>(root)] = 1.0;
    for (std::int32_t i = root; i >= 0; --i) {
      const double g = adjoint_[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.a >= 0) adjoint_[static_cast<std::size_t>(n.a)] += n.da * g;
      if (n.b >= 0) adjoint_[static_cast<std::size_t>(n.b)] += n.db * g;
    }
  }

  double adjoint(std::int32_t i) const {
    return i < 0 ? 0.0 : adjoint_.at(static_cast<std::size_t>(i));
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> adjoint_;
};

inline thread_local Tape* active_tape = nullptr;

inline Tape& tape() {
  if (active_tape == nullptr) throw std::logic_error("ad: no active tape");
  return *active_tape;
}

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(active_tape) { active_tape = &t; }
  ~TapeScope() { active_tape = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

class Var {
 public:
  Var() = default;
  Var(double v) : v_(v) {}  // NOLINT: constants convert implicitly
  Var(double v, std::int32_t idx) : v_(v), idx_(idx) {}

  static Var leaf(double v) { return Var(v, tape().leaf()); }

  double value() const { return v_; }
  std::int32_t index() const { return idx_; }
  bool is_constant() const { return idx_ < 0; }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var unary(const Var& x, double v, double dv) {
    if (x.idx_ < 0) return Var(v);
    return Var(v, tape().push(x.idx_, dv));
  }

  friend Var binary(const Var& x, const Var& y, double v, double dx, double dy) {
    if (x.idx_ < 0 && y.idx_ < 0) return Var(v);
    if (x.idx_ < 0) return Var(v, tape().push(y.idx_, dy));
    if (y.idx_ < 0) return Var(v, tape().push(x.idx_, dx));
    return Var(v, tape().push(x.idx_, dx, y.idx_, dy));
  }

  friend Var operator+(const Var& x, const Var& y) { return binary(x, y, x.v_ + y.v_, 1.0, 1.0); }
  friend Var operator-(const Var& x, const Var& y) { return binary(x, y, x.v_ - y.v_, 1.0, -1.0); }
  friend Var operator*(const Var& x, const Var& y) { return binary(x, y, x.v_ * y.v_, y.v_, x.v_); }
  friend Var operator/(const Var& x, const Var& y) {
    const double inv = 1.0 / y.v_;
    return binary(x, y, x.v_ * inv, inv, -x.v_ * inv * inv);
  }
  friend Var operator-(const Var& x) { return unary(x, -x.v_, -1.0); }

  friend bool operator<(const Var& x, const Var& y) { return x.v_ < y.v_; }
  friend bool operator>(const Var& x, const Var& y) { return x.v_ > y.v_; }
  friend bool operator<=(const Var& x, const Var& y) { return x.v_ <= y.v_; }
  friend bool operator>=(const Var& x, const Var& y) { return x.v_ >= y.v_; }

  friend Var exp(const Var& x) {
    const double e = std::exp(x.v_);
    return unary(x, e, e);
  }
  friend Var log(const Var& x) { return unary(x, std::log(x.v_), 1.0 / x.v_); }
  friend Var log1p(const Var& x) { return unary(x, std::log1p(x.v_), 1.0 / (1.0 + x.v_)); }
  friend Var sqrt(const Var& x) {
    const double s = std::sqrt(x.v_);
    return unary(x, s, 0.5 / s);
  }
  friend Var tanh(const Var& x) {
    const double t = std::tanh(x.v_);
    return unary(x, t, 1.0 - t * t);
  }
  friend Var lgamma(const Var& x) {
    return unary(x, std::lgamma(x.v_), boost::math::digamma(x.v_));
  }
  friend Var abs(const Var& x) { return unary(x, std::fabs(x.v_), x.v_ >= 0.0 ? 1.0 : -1.0); }
  friend Var square(const Var& x) { return unary(x, x.v_ * x.v_, 2.0 * x.v_); }
  friend Var softplus(const Var& x) {
    const double v = x.v_ > 30.0 ? x.v_ : std::log1p(std::exp(x.v_));
    return unary(x, v, 1.0 / (1.0 + std::exp(-x.v_)));
  }
  friend Var sigmoid(const Var& x) {
    const double s = 1.0 / (1.0 + std::exp(-x.v_));
    return unary(x, s, s * (1.0 - s));
  }
  friend bool isfinite(const Var& x) { return std::isfinite(x.v_); }

 private:
  double v_ = 0.0;
  std::int32_t idx_ = -1;
};

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.value(); }

inline double square(double x) { return x * x; }
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace ccssix::ad

namespace ccssix {
using ad::sigmoid;
using ad::softplus;
using ad::square;
using ad::value;
}  // namespace ccssix
