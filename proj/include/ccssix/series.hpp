// Raw-unit series blocks and CSV input (long `timestamp,var,value` or wide form).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccssix/model.hpp"

namespace ccssix {

/// Row-major block of a multivariate series in raw units. `mask` flags
/// observed state entries; controls and disturbances are always known.
struct SeriesBlock {
  int n_obs = 0;
  int n_u = 0;
  int n_w = 0;
  std::vector<double> obs;
  std::vector<std::uint8_t> mask;
  std::vector<double> u;
  std::vector<double> w;
  std::vector<double> dt;

  SeriesBlock() = default;
  SeriesBlock(int no, int nu, int nw, std::size_t len = 0) : n_obs(no), n_u(nu), n_w(nw) { resize(len); }

  std::size_t length() const { return dt.size(); }

  void resize(std::size_t len) {
    obs.resize(len * static_cast<std::size_t>(n_obs), 0.0);
    mask.resize(len * static_cast<std::size_t>(n_obs), 1);
    u.resize(len * static_cast<std::size_t>(n_u), 0.0);
    w.resize(len * static_cast<std::size_t>(n_w), 0.0);
    dt.resize(len, 1.0);
  }

  double& y(std::size_t t, int i) { return obs[t * static_cast<std::size_t>(n_obs) + static_cast<std::size_t>(i)]; }
  double y(std::size_t t, int i) const { return obs[t * static_cast<std::size_t>(n_obs) + static_cast<std::size_t>(i)]; }
  std::uint8_t& m(std::size_t t, int i) { return mask[t * static_cast<std::size_t>(n_obs) + static_cast<std::size_t>(i)]; }
  std::uint8_t m(std::size_t t, int i) const { return mask[t * static_cast<std::size_t>(n_obs) + static_cast<std::size_t>(i)]; }
  double& uc(std::size_t t, int i) { return u[t * static_cast<std::size_t>(n_u) + static_cast<std::size_t>(i)]; }
  double uc(std::size_t t, int i) const { return u[t * static_cast<std::size_t>(n_u) + static_cast<std::size_t>(i)]; }
  double& wd(std::size_t t, int i) { return w[t * static_cast<std::size_t>(n_w) + static_cast<std::size_t>(i)]; }
  double wd(std::size_t t, int i) const { return w[t * static_cast<std::size_t>(n_w) + static_cast<std::size_t>(i)]; }

  SeriesBlock slice(std::size_t begin, std::size_t end) const {
    if (end < begin || end > length()) throw std::out_of_range("SeriesBlock::slice out of range");
    SeriesBlock s(n_obs, n_u, n_w, end - begin);
    auto cp = [&](const auto& src, auto& dst, int width) {
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin * static_cast<std::size_t>(width)),
                src.begin() + static_cast<std::ptrdiff_t>(end * static_cast<std::size_t>(width)), dst.begin());
    };
    cp(obs, s.obs, n_obs);
    cp(mask, s.mask, n_obs);
    cp(u, s.u, n_u);
    cp(w, s.w, n_w);
    cp(dt, s.dt, 1);
    return s;
  }
};

/// Future exogenous inputs of a scenario, raw units.
struct ScenarioInputs {
  int n_u = 0;
  int n_w = 0;
  std::vector<double> u;
  std::vector<double> w;
  std::vector<double> dt;

  std::size_t horizon() const { return dt.size(); }
  double uc(std::size_t t, int i) const { return u[t * static_cast<std::size_t>(n_u) + static_cast<std::size_t>(i)]; }
  double wd(std::size_t t, int i) const { return w[t * static_cast<std::size_t>(n_w) + static_cast<std::size_t>(i)]; }

  void validate() const {
    const std::size_t H = horizon();
    if (u.size() != H * static_cast<std::size_t>(n_u) || w.size() != H * static_cast<std::size_t>(n_w))
      throw ShapeError("scenario input lengths differ from the horizon");
    for (double d : dt)
      if (!(d > 0.0)) throw ShapeError("scenario intervals must be positive");
  }
};

inline ScenarioInputs inputs_of(const SeriesBlock& b) {
  return ScenarioInputs{b.n_u, b.n_w, b.u, b.w, b.dt};
}

struct ColumnRoles {
  std::vector<std::string> obs;
  std::vector<std::string> controls;
  std::vector<std::string> disturbances;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_timestamp(const std::string& s) {
  // Numeric timestamps are minutes; ISO-8601 "YYYY-MM-DD HH:MM[:SS]" also accepted.
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  int Y = 0, M = 0, D = 0, h = 0, mi = 0;
  double sec = 0.0;
  char sep = ' ';
  std::istringstream is(s);
  char dash1, dash2, colon1;
  is >> Y >> dash1 >> M >> dash2 >> D >> std::noskipws >> sep >> std::skipws >> h >> colon1 >> mi;
  if (!is) throw std::invalid_argument("cannot parse timestamp '" + s + "'");
  char colon2;
  if (is >> colon2 >> sec) {
  }
  // days from civil (proleptic Gregorian)
  const int y = Y - (M <= 2 ? 1 : 0);
  const int era = (y >= 0 ? y : y - 399) / 400;
  const int yoe = y - era * 400;
  const int doy = (153 * (M + (M > 2 ? -3 : 9)) + 2) / 5 + D - 1;
  const int doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const double days = static_cast<double>(era) * 146097.0 + doe - 719468.0;
  return days * 1440.0 + h * 60.0 + mi + sec / 60.0;
}
}  // namespace detail

/// Reads a series CSV. Long form has header `timestamp,var,value`; otherwise
/// the header is `timestamp,<var>,<var>,...`. Blank values are missing.
/// Missing control or disturbance values carry the previous value forward.
inline SeriesBlock read_series_csv(std::istream& in, const ColumnRoles& roles) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("series CSV is empty");
  const auto header = detail::split_csv_line(line);
  std::map<double, std::map<std::string, double>> rows;
  const bool long_form = header.size() == 3 && header[0] == "timestamp" && header[1] == "var" && header[2] == "value";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const double ts = detail::parse_timestamp(f.at(0));
    auto& row = rows[ts];
    if (long_form) {
      if (f.size() < 3) throw std::invalid_argument("long-form row needs timestamp,var,value");
      if (!f[2].empty()) row[f[1]] = std::stod(f[2]);
    } else {
      for (std::size_t c = 1; c < header.size() && c < f.size(); ++c)
        if (!f[c].empty()) row[header[c]] = std::stod(f[c]);
    }
  }
  const int no = static_cast<int>(roles.obs.size()), nu = static_cast<int>(roles.controls.size()),
            nw = static_cast<int>(roles.disturbances.size());
  SeriesBlock b(no, nu, nw, rows.size());
  std::vector<double> last_u(static_cast<std::size_t>(nu), 0.0), last_w(static_cast<std::size_t>(nw), 0.0);
  std::size_t t = 0;
  double prev_ts = 0.0;
  std::vector<double> gaps;
  for (const auto& [ts, row] : rows) {
    for (int i = 0; i < no; ++i) {
      auto it = row.find(roles.obs[static_cast<std::size_t>(i)]);
      b.m(t, i) = it != row.end() && std::isfinite(it->second);
      b.y(t, i) = b.m(t, i) ? it->second : 0.0;
    }
    for (int i = 0; i < nu; ++i) {
      auto it = row.find(roles.controls[static_cast<std::size_t>(i)]);
      if (it != row.end()) last_u[static_cast<std::size_t>(i)] = it->second;
      b.uc(t, i) = last_u[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < nw; ++i) {
      auto it = row.find(roles.disturbances[static_cast<std::size_t>(i)]);
      if (it != row.end()) last_w[static_cast<std::size_t>(i)] = it->second;
      b.wd(t, i) = last_w[static_cast<std::size_t>(i)];
    }
    if (t > 0) gaps.push_back(ts - prev_ts);
    prev_ts = ts;
    ++t;
  }
  // dt[t] is the interval ending at row t; the first row reuses the median gap.
  double med = 1.0;
  if (!gaps.empty()) {
    auto g = gaps;
    std::nth_element(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(g.size() / 2), g.end());
    med = g[g.size() / 2];
  }
  if (!b.dt.empty()) b.dt[0] = med;
  for (std::size_t i = 0; i < gaps.size(); ++i) b.dt[i + 1] = gaps[i];
  return b;
}

inline SeriesBlock read_series_csv(const std::string& path, const ColumnRoles& roles) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open series file '" + path + "'");
  return read_series_csv(f, roles);
}

/// Wide-form CSV with numeric minute timestamps; masked entries are blank.
inline void write_series_csv(std::ostream& out, const SeriesBlock& b, const ColumnRoles& roles) {
  out << "timestamp";
  for (const auto& n : roles.obs) out << ',' << n;
  for (const auto& n : roles.controls) out << ',' << n;
  for (const auto& n : roles.disturbances) out << ',' << n;
  out << '\n';
  out.precision(10);
  double ts = 0.0;
  for (std::size_t t = 0; t < b.length(); ++t) {
    if (t > 0) ts += b.dt[t];
    out << ts;
    for (int i = 0; i < b.n_obs; ++i) {
      out << ',';
      if (b.m(t, i)) out << b.y(t, i);
    }
    for (int i = 0; i < b.n_u; ++i) out << ',' << b.uc(t, i);
    for (int i = 0; i < b.n_w; ++i) out << ',' << b.wd(t, i);
    out << '\n';
  }
}

/// Screening request: context history, planned controls, disturbance
/// forecast and the decision threshold on the safety target.
struct Scenario {
  std::string id;
  SeriesBlock history;
  ScenarioInputs inputs;
  double tau = 0.0;
  int target = 0;  // observed variable the threshold applies to

  int horizon() const { return static_cast<int>(inputs.horizon()); }
  void validate() const {
    if (horizon() < 2) throw ShapeError("scenario horizon must be at least 2");
    if (!std::isfinite(tau)) throw ShapeError("scenario threshold must be finite");
    if (target < 0 || target >= history.n_obs) throw ShapeError("scenario target out of range");
    if (inputs.n_u != history.n_u || inputs.n_w != history.n_w) throw ShapeError("scenario inputs differ from history");
    inputs.validate();
  }
};

}  // namespace ccssix
