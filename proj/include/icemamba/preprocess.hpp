#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "icemamba/grid.hpp"

namespace icemamba {

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double at(double t) const { return intercept + slope * t; }
};

/// Ordinary least squares y = intercept + slope * t.
inline LineFit fit_line(std::span<const double> t, std::span<const double> y) {
  if (t.size() != y.size()) throw ShapeError("fit_line: time and value lengths differ");
  const std::size_t n = t.size();
  if (n < 2) throw DataError("fit_line: need at least 2 points, got " + std::to_string(n));
  double tm = 0, ym = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tm += t[i];
    ym += y[i];
  }
  tm /= static_cast<double>(n);
  ym /= static_cast<double>(n);
  double stt = 0, sty = 0;
  for (std::size_t i = 0; i < n; ++i) {
    stt += (t[i] - tm) * (t[i] - tm);
    sty += (t[i] - tm) * (y[i] - ym);
  }
  if (stt == 0.0) throw DataError("fit_line: constant time axis");
  const double slope = sty / stt;
  return {ym - slope * tm, slope};
}

/// Zeroes land cells of every field.
inline void apply_land_mask(GridSeries& g) {
  for (std::size_t t = 0; t < g.steps(); ++t) {
    auto f = g.field(t);
    for (std::size_t i = 0; i < g.cells(); ++i) if (g.land[i]) f[i] = 0.0f;
  }
}

/// Fills hole cells with the mean of their valid (non-hole, non-land)
/// 8-neighbours, sweeping inward until every hole cell has a value.
inline std::vector<float> fill_pole_hole(std::span<const float> field, std::size_t height, std::size_t width,
                                         const Mask& hole, const Mask& land) {
  const std::size_t n = height * width;
  if (field.size() != n || hole.size() != n || land.size() != n) {
    throw ShapeError("fill_pole_hole: field and masks must cover the same grid");
  }
  std::vector<float> out(field.begin(), field.end());
  std::vector<std::uint8_t> known(n);
  std::size_t missing = 0;
  for (std::size_t i = 0; i < n; ++i) {
    known[i] = !hole[i] && !land[i];
    if (hole[i] && !land[i]) ++missing;
  }
  while (missing > 0) {
    std::vector<std::pair<std::size_t, float>> filled;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t i = y * width + x;
        if (!hole[i] || land[i] || known[i]) continue;
        double sum = 0.0;
        int count = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(height) || xx >= static_cast<long>(width)) continue;
            const std::size_t j = static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx);
            if (!known[j]) continue;
            sum += out[j];
            ++count;
          }
        }
        if (count) filled.emplace_back(i, static_cast<float>(sum / count));
      }
    }
    if (filled.empty()) {
      throw DataError("fill_pole_hole: " + std::to_string(missing) +
                      " hole cells have no valid ocean neighbours (hole touches only land)");
    }
    for (auto [i, v] : filled) {
      out[i] = v;
      known[i] = 1;
    }
    missing -= filled.size();
  }
  return out;
}

/// SIC cleanup: pole-hole fill where a mask is present, clamp to [0,1],
/// land cells 0.
inline void preprocess_sic(GridSeries& g) {
  for (std::size_t t = 0; t < g.steps(); ++t) {
    auto f = g.field(t);
    if (g.pole_hole) {
      const auto filled = fill_pole_hole(f, g.height, g.width, *g.pole_hole, g.land);
      std::copy(filled.begin(), filled.end(), f.begin());
    }
    for (std::size_t i = 0; i < g.cells(); ++i) {
      if (!std::isfinite(f[i])) {
        throw DataError("variable '" + g.variable + "' has a non-finite value at " + g.months[t].str());
      }
      f[i] = g.land[i] ? 0.0f : std::clamp(f[i], 0.0f, 1.0f);
    }
  }
}

/// Per-calendar-month mean fields over a fit window.
struct Climatology {
  std::size_t cells = 0;
  Month first{}, last{};
  std::array<std::vector<double>, 12> means;

  std::span<const double> month(int calendar_month) const { return means.at(calendar_month - 1); }
};

inline Climatology fit_climatology(const GridSeries& g, Month first, Month last) {
  Climatology c;
  c.cells = g.cells();
  c.first = first;
  c.last = last;
  std::array<std::size_t, 12> counts{};
  for (auto& m : c.means) m.assign(g.cells(), 0.0);
  for (std::size_t t = 0; t < g.steps(); ++t) {
    if (g.months[t] < first || last < g.months[t]) continue;
    auto& acc = c.means[g.months[t].month - 1];
    const auto f = g.field(t);
    for (std::size_t i = 0; i < g.cells(); ++i) acc[i] += f[i];
    ++counts[g.months[t].month - 1];
  }
  for (int m = 0; m < 12; ++m) {
    if (counts[m] == 0) {
      throw DataError("climatology for '" + g.variable + "': window " + first.str() + ".." + last.str() +
                      " has no sample of calendar month " + std::to_string(m + 1));
    }
    for (auto& v : c.means[m]) v /= static_cast<double>(counts[m]);
  }
  return c;
}

/// Anomaly of field t against its calendar month, in double precision.
inline std::vector<double> anomaly_field(const GridSeries& g, const Climatology& c, std::size_t t) {
  if (c.cells != g.cells()) throw ShapeError("anomaly: climatology grid does not match series");
  const auto f = g.field(t);
  const auto clim = c.month(g.months[t].month);
  std::vector<double> out(g.cells());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(f[i]) - clim[i];
  return out;
}

inline GridSeries anomalies(const GridSeries& g, const Climatology& c) {
  GridSeries out = g;
  for (std::size_t t = 0; t < g.steps(); ++t) {
    const auto a = anomaly_field(g, c, t);
    auto f = out.field(t);
    for (std::size_t i = 0; i < a.size(); ++i) f[i] = static_cast<float>(a[i]);
  }
  return out;
}

/// Per-variable scalar normalization fitted over ocean cells of a window.
struct NormStats {
  std::string variable;
  double mean = 0.0;
  double std = 1.0;
  Month first{}, last{};
  std::string climatology_file;

  /// Identity of a fitted statistic: equal ids mean the same numbers.
  std::string id() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s@%s..%s:%a:%a", variable.c_str(), first.str().c_str(), last.str().c_str(),
                  mean, std);
    return buf;
  }
};

inline NormStats fit_norm_stats(const GridSeries& g, Month first, Month last) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < g.steps(); ++t) {
    if (g.months[t] < first || last < g.months[t]) continue;
    const auto f = g.field(t);
    for (std::size_t i = 0; i < g.cells(); ++i) {
      if (g.land[i]) continue;
      sum += f[i];
      sq += static_cast<double>(f[i]) * f[i];
      ++n;
    }
  }
  if (n == 0) throw DataError("normalization for '" + g.variable + "': fit window holds no ocean samples");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  return {g.variable, mean, std::sqrt(var), first, last, {}};
}

/// (x - mean) / std on ocean cells; land cells become 0.
inline GridSeries normalize(const GridSeries& g, const NormStats& s) {
  if (!(s.std > 0.0) || !std::isfinite(s.std)) {
    throw DataError("normalize: variable '" + s.variable + "' has zero standard deviation");
  }
  GridSeries out = g;
  for (std::size_t t = 0; t < g.steps(); ++t) {
    auto f = out.field(t);
    for (std::size_t i = 0; i < g.cells(); ++i) {
      f[i] = g.land[i] ? 0.0f : static_cast<float>((static_cast<double>(f[i]) - s.mean) / s.std);
    }
  }
  return out;
}

/// Stats manifest: {variable -> {mean, std, climatology, fit_window: [first, last]}}.
inline void write_stats_manifest(const std::string& path, const std::vector<NormStats>& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : stats) {
    j[s.variable] = {{"mean", s.mean},
                     {"std", s.std},
                     {"climatology", s.climatology_file},
                     {"fit_window", {s.first.str(), s.last.str()}}};
  }
  const std::string text = j.dump(2) + "\n";
  io::write_atomically(path, [&](std::ostream& os) { os << text; });
}

inline std::map<std::string, NormStats> read_stats_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read stats manifest '" + path + "'");
  std::map<std::string, NormStats> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [name, v] : j.items()) {
      NormStats s;
      s.variable = name;
      s.mean = v.at("mean").get<double>();
      s.std = v.at("std").get<double>();
      s.climatology_file = v.value("climatology", "");
      const auto& w = v.at("fit_window");
      s.first = Month::parse(w.at(0).get<std::string>());
      s.last = Month::parse(w.at(1).get<std::string>());
      out.emplace(name, std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("stats manifest '" + path + "': " + e.what());
  }
  return out;
}

/// Removes each cell's least-squares line in time (time = month index).
inline GridSeries detrend_linear(const GridSeries& g) {
  if (g.steps() < 3) {
    throw DataError("detrend_linear: '" + g.variable + "' needs at least 3 time points, has " +
                    std::to_string(g.steps()));
  }
  std::vector<double> t(g.steps()), y(g.steps());
  for (std::size_t k = 0; k < g.steps(); ++k) t[k] = static_cast<double>(g.months[k].index() - g.months[0].index());
  GridSeries out = g;
  for (std::size_t i = 0; i < g.cells(); ++i) {
    for (std::size_t k = 0; k < g.steps(); ++k) y[k] = g.field(k)[i];
    const auto fit = fit_line(t, y);
    for (std::size_t k = 0; k < g.steps(); ++k) out.field(k)[i] = static_cast<float>(y[k] - fit.at(t[k]));
  }
  return out;
}

}  // namespace icemamba
