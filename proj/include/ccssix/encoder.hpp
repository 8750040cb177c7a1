// History encoder: exponentially weighted summaries of a masked history.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ccssix/model.hpp"
#include "ccssix/series.hpp"

namespace ccssix {

/// Recursive EW state per variable (observed states, controls, disturbances,
/// in that order, standardized units). Re-encoding a simulated prefix is just
/// further updates of the same state.
struct EncoderState {
  double alpha = 0.1;
  std::vector<double> last, ewm, ewv;
  std::vector<int> n_valid;
  std::vector<std::uint8_t> seen;
  int n_total = 0;

  EncoderState() = default;
  EncoderState(int n_vars, double span)
      : alpha(2.0 / (span + 1.0)),
        last(static_cast<std::size_t>(n_vars), 0.0),
        ewm(last),
        ewv(last),
        n_valid(static_cast<std::size_t>(n_vars), 0),
        seen(static_cast<std::size_t>(n_vars), 0) {}

  int n_vars() const { return static_cast<int>(last.size()); }

  void update(std::span<const double> row, std::span<const std::uint8_t> mask) {
    for (std::size_t i = 0; i < last.size(); ++i) {
      if (!mask[i]) continue;
      const double x = row[i];
      ++n_valid[i];
      last[i] = x;
      if (!seen[i]) {
        ewm[i] = x;
        ewv[i] = 0.0;
        seen[i] = 1;
      } else {
        const double diff = x - ewm[i];
        ewm[i] += alpha * diff;
        ewv[i] = (1.0 - alpha) * (ewv[i] + alpha * diff * diff);
      }
    }
    ++n_total;
  }

  /// last value, EW mean, EW variance, missing fraction per variable
  std::vector<double> features() const {
    std::vector<double> f;
    f.reserve(4 * last.size());
    for (std::size_t i = 0; i < last.size(); ++i) {
      f.push_back(last[i]);
      f.push_back(ewm[i]);
      f.push_back(ewv[i]);
      f.push_back(n_total > 0 ? 1.0 - static_cast<double>(n_valid[i]) / n_total : 1.0);
    }
    return f;
  }

  /// EW mean and EW standard deviation per variable
  std::vector<double> global_summary() const {
    std::vector<double> g;
    g.reserve(2 * last.size());
    for (std::size_t i = 0; i < last.size(); ++i) {
      g.push_back(ewm[i]);
      g.push_back(std::sqrt(ewv[i]));
    }
    return g;
  }
};

/// Standardized row [obs | u | w] with a matching mask.
inline void standardized_row(const ModelParams& mp, const SeriesBlock& b, std::size_t t, std::vector<double>& row,
                             std::vector<std::uint8_t>& mask) {
  const int no = mp.dims.n_obs, nu = mp.dims.n_u, nw = mp.dims.n_w;
  row.assign(static_cast<std::size_t>(no + nu + nw), 0.0);
  mask.assign(row.size(), 1);
  for (int i = 0; i < no; ++i) {
    mask[static_cast<std::size_t>(i)] = b.m(t, i);
    row[static_cast<std::size_t>(i)] = b.m(t, i) ? mp.obs_scale.to_std(static_cast<std::size_t>(i), b.y(t, i)) : 0.0;
  }
  for (int i = 0; i < nu; ++i)
    row[static_cast<std::size_t>(no + i)] = mp.u_scale.to_std(static_cast<std::size_t>(i), b.uc(t, i));
  for (int i = 0; i < nw; ++i)
    row[static_cast<std::size_t>(no + nu + i)] = mp.w_scale.to_std(static_cast<std::size_t>(i), b.wd(t, i));
}

inline EncoderState encode_history(const ModelParams& mp, const SeriesBlock& history) {
  if (history.n_obs != mp.dims.n_obs || history.n_u != mp.dims.n_u || history.n_w != mp.dims.n_w)
    throw ShapeError("history dimensions do not match the model");
  EncoderState e(mp.dims.n_vars(), mp.config.encoder_span);
  std::vector<double> row;
  std::vector<std::uint8_t> mask;
  for (std::size_t t = 0; t < history.length(); ++t) {
    standardized_row(mp, history, t, row, mask);
    e.update(row, mask);
  }
  return e;
}

}  // namespace ccssix
