// Model dimensions, configuration, flat parameter layout and initialization.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccssix {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant { Static, Adaptive, AdaptiveResidual };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Static: return "static";
    case Variant::Adaptive: return "adaptive";
    case Variant::AdaptiveResidual: return "adaptive+residual";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "static") return Variant::Static;
  if (s == "adaptive") return Variant::Adaptive;
  if (s == "adaptive+residual" || s == "adaptive_residual") return Variant::AdaptiveResidual;
  throw ConfigError("unknown model variant '" + s + "'");
}

struct ModelDims {
  int n_obs = 0;
  int n_u = 0;
  int n_w = 0;
  int n_slack = 2;
  int K = 3;
  int R = 4;
  int n_knots = 16;

  int dz() const { return n_obs + n_slack; }
  int n_vars() const { return n_obs + n_u + n_w; }
  /// last value, EW mean, EW variance, missing fraction per variable
  int n_enc() const { return 4 * n_vars(); }
  /// gate probs | latent EW mean | latent EW std | global EW mean,std | fast state | dt features
  int d_gamma() const { return K + 2 * dz() + 2 * n_vars() + dz() + 2; }
  int n_route() const { return d_gamma() + n_u + n_w; }
  int n_shape() const { return dz() + n_u + n_w; }
  int n_residual_in() const { return dz() + n_u + n_w; }
};

struct ModelConfig {
  Variant variant = Variant::Adaptive;
  double kappa = 3.0;         // stickiness bias on the previous argmax regime
  double alpha = 0.0;         // residual gate; zero in the main configuration
  double dt_ref = 1.0;        // median training interval, minutes
  double encoder_span = 16.0;  // EW span of the history encoder
  double latent_span = 8.0;   // EW span of the rollout latent statistics
  double knot_lo = -3.0;
  double knot_hi = 3.0;
  double hurdle_threshold = 0.001;
  std::vector<bool> hurdle;   // per observed variable
};

/// Offsets of one regime's blocks inside the flat parameter vector.
struct RegimeOffsets {
  std::size_t A0, dA, cAW, cAb;
  std::size_t B0, dB, cBW, cBb;
  std::size_t E0, dE, cEW, cEb;
  std::size_t d0, dW;
  std::size_t knots, load, sW, sb, oW, ob;
  std::size_t rW, rb;
};

struct GlobalOffsets {
  std::size_t gate_W, gate_b;
  std::size_t enc_Wz, enc_bz, enc_Wg, enc_bg;
  std::size_t loc_W, loc_b, scale_W, scale_b, nu, hurdle_W, hurdle_b;
};

enum class BlockKind { Shared, Adaptive, Residual };

struct Block {
  std::string name;
  int regime = -1;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  BlockKind kind = BlockKind::Shared;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

class Layout {
 public:
  Layout() = default;
  explicit Layout(const ModelDims& d) : dims_(d) {
    const int dz = d.dz(), dg = d.d_gamma(), R = d.R, K = d.K;
    global_.gate_W = add("gate_W", -1, K, d.n_route());
    global_.gate_b = add("gate_b", -1, K, 1);
    global_.enc_Wz = add("enc_Wz", -1, dz, d.n_enc());
    global_.enc_bz = add("enc_bz", -1, dz, 1);
    global_.enc_Wg = add("enc_Wg", -1, K, d.n_enc());
    global_.enc_bg = add("enc_bg", -1, K, 1);
    global_.loc_W = add("head_loc_W", -1, d.n_obs, dz);
    global_.loc_b = add("head_loc_b", -1, d.n_obs, 1);
    global_.scale_W = add("head_scale_W", -1, d.n_obs, dz);
    global_.scale_b = add("head_scale_b", -1, d.n_obs, 1);
    global_.nu = add("head_nu", -1, d.n_obs, 1);
    global_.hurdle_W = add("head_hurdle_W", -1, d.n_obs, dz);
    global_.hurdle_b = add("head_hurdle_b", -1, d.n_obs, 1);
    for (int k = 0; k < K; ++k) {
      RegimeOffsets o{};
      o.A0 = add("A0", k, dz, dz);
      o.dA = add("dA", k, R * dz, dz, BlockKind::Adaptive);
      o.cAW = add("coefA_W", k, R, dg, BlockKind::Adaptive);
      o.cAb = add("coefA_b", k, R, 1, BlockKind::Adaptive);
      o.B0 = add("B0", k, dz, d.n_u);
      o.dB = add("dB", k, R * dz, d.n_u, BlockKind::Adaptive);
      o.cBW = add("coefB_W", k, R, dg, BlockKind::Adaptive);
      o.cBb = add("coefB_b", k, R, 1, BlockKind::Adaptive);
      o.E0 = add("E0", k, dz, d.n_w);
      o.dE = add("dE", k, R * dz, d.n_w, BlockKind::Adaptive);
      o.cEW = add("coefE_W", k, R, dg, BlockKind::Adaptive);
      o.cEb = add("coefE_b", k, R, 1, BlockKind::Adaptive);
      o.d0 = add("d0", k, dz, 1);
      o.dW = add("bias_W", k, dz, dg, BlockKind::Adaptive);
      o.knots = add("shape_knots", k, d.n_shape(), d.n_knots);
      o.load = add("shape_loading", k, d.n_shape(), dz);
      o.sW = add("shape_scale_W", k, d.n_shape(), dg, BlockKind::Adaptive);
      o.sb = add("shape_scale_b", k, d.n_shape(), 1, BlockKind::Adaptive);
      o.oW = add("shape_offset_W", k, d.n_shape(), dg, BlockKind::Adaptive);
      o.ob = add("shape_offset_b", k, d.n_shape(), 1, BlockKind::Adaptive);
      o.rW = add("residual_W", k, dz, d.n_residual_in(), BlockKind::Residual);
      o.rb = add("residual_b", k, dz, 1, BlockKind::Residual);
      regimes_.push_back(o);
    }
  }

  const ModelDims& dims() const { return dims_; }
  std::size_t size() const { return size_; }
  const GlobalOffsets& global() const { return global_; }
  const RegimeOffsets& regime(int k) const { return regimes_.at(static_cast<std::size_t>(k)); }
  const std::vector<Block>& blocks() const { return blocks_; }

  const Block& find(const std::string& name, int regime = -1) const {
    for (const auto& b : blocks_)
      if (b.name == name && b.regime == regime) return b;
    throw std::out_of_range("no parameter block '" + name + "'");
  }

  /// 1 for entries the given variant trains, 0 for frozen entries.
  std::vector<double> trainable_mask(Variant v) const {
    std::vector<double> m(size_, 1.0);
    for (const auto& b : blocks_) {
      const bool frozen = (b.kind == BlockKind::Adaptive && v == Variant::Static) ||
                          (b.kind == BlockKind::Residual && v != Variant::AdaptiveResidual);
      if (frozen) std::fill(m.begin() + static_cast<std::ptrdiff_t>(b.offset),
                            m.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()), 0.0);
    }
    return m;
  }

 private:
  std::size_t add(const std::string& name, int regime, int rows, int cols,
                  BlockKind kind = BlockKind::Shared) {
    blocks_.push_back(Block{name, regime, size_, rows, cols, kind});
    const std::size_t off = size_;
    size_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    return off;
  }

  ModelDims dims_{};
  std::size_t size_ = 0;
  GlobalOffsets global_{};
  std::vector<RegimeOffsets> regimes_;
  std::vector<Block> blocks_;
};

/// Affine map between raw units and the standardized units the dynamics use.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> sd;

  double to_std(std::size_t i, double x) const { return (x - mean[i]) / sd[i]; }
  double to_raw(std::size_t i, double x) const { return x * sd[i] + mean[i]; }
};

struct VariableNames {
  std::vector<std::string> obs;
  std::vector<std::string> controls;
  std::vector<std::string> disturbances;
};

struct FitMetadata {
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_loss = 0.0;
  bool converged = true;
  std::string data_hash;
};

struct ModelParams {
  ModelDims dims;
  ModelConfig config;
  Layout layout;
  VariableNames names;
  Standardizer obs_scale;
  Standardizer u_scale;
  Standardizer w_scale;
  std::vector<double> theta;
  FitMetadata meta;
  std::string id = "model";

  std::span<const double> block(const std::string& name, int regime = -1) const {
    const auto& b = layout.find(name, regime);
    return {theta.data() + b.offset, b.size()};
  }
  std::span<double> block(const std::string& name, int regime = -1) {
    const auto& b = layout.find(name, regime);
    return {theta.data() + b.offset, b.size()};
  }
};

inline Standardizer identity_scale(int n) {
  return Standardizer{std::vector<double>(static_cast<std::size_t>(n), 0.0),
                      std::vector<double>(static_cast<std::size_t>(n), 1.0)};
}

/// Fresh parameters: discrete step map I + A0 near 0.95 persistence, small
/// control/disturbance/delta couplings, zero modulation and gate logits,
/// identity-like encoder and output head.
inline ModelParams init_params(const ModelDims& dims, const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.dims = dims;
  p.config = cfg;
  if (p.config.hurdle.empty()) p.config.hurdle.assign(static_cast<std::size_t>(dims.n_obs), false);
  if (static_cast<int>(p.config.hurdle.size()) != dims.n_obs)
    throw ShapeError("hurdle flags must match the number of observed variables");
  p.layout = Layout(dims);
  p.theta.assign(p.layout.size(), 0.0);
  p.obs_scale = identity_scale(dims.n_obs);
  p.u_scale = identity_scale(dims.n_u);
  p.w_scale = identity_scale(dims.n_w);
  p.meta.seed = seed;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](const std::string& name, int k, double scale) {
    for (auto& v : p.block(name, k)) v = scale * normal(rng);
  };
  const int dz = dims.dz();
  for (int k = 0; k < dims.K; ++k) {
    auto A = p.block("A0", k);
    for (int i = 0; i < dz; ++i)
      for (int j = 0; j < dz; ++j)
        A[static_cast<std::size_t>(i * dz + j)] = (i == j ? -0.05 : 0.0) + 0.01 * normal(rng);
    fill("dA", k, 1e-2);
    fill("B0", k, 1e-2);
    fill("dB", k, 1e-2);
    fill("E0", k, 1e-2);
    fill("dE", k, 1e-2);
    fill("shape_loading", k, 1e-1);
    fill("residual_W", k, 1e-2);
  }
  // The encoder starts by copying each observed variable's last valid value
  // into the matching latent coordinate; the head reads those coordinates back.
  auto Wz = p.block("enc_Wz");
  const int n_enc = dims.n_enc();
  for (int i = 0; i < dims.n_obs; ++i) Wz[static_cast<std::size_t>(i * n_enc + 4 * i)] = 1.0;
  auto L = p.block("head_loc_W");
  for (int i = 0; i < dims.n_obs; ++i) L[static_cast<std::size_t>(i * dz + i)] = 1.0;
  for (auto& v : p.block("head_scale_b")) v = std::log(std::expm1(0.3));
  for (auto& v : p.block("head_nu")) v = std::log(std::expm1(4.0));
  for (auto& v : p.block("head_hurdle_b")) v = 2.0;
  return p;
}

}  // namespace ccssix
