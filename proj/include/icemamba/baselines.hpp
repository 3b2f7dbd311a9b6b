#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "icemamba/preprocess.hpp"

namespace icemamba {

inline constexpr std::size_t kClimatologyYears = 10;

/// Mean field of `calendar_month` over the `years`-year window ending the
/// month before `init`.
inline std::vector<double> sliding_climatology(const GridSeries& g, Month init, int calendar_month,
                                               std::size_t years = kClimatologyYears) {
  std::vector<double> acc(g.cells(), 0.0);
  std::size_t count = 0;
  const long first = init.index() - static_cast<long>(12 * years);
  for (long m = first; m < init.index(); ++m) {
    const Month month = Month::from_index(m);
    if (month.month != calendar_month) continue;
    const auto t = g.index_of(month);
    if (!t) {
      throw DataError("baseline for " + init.str() + ": insufficient history, " + g.variable +
                      " lacks " + month.str() + " of its " + std::to_string(years) + "-year window");
    }
    const auto f = g.field(*t);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f[i];
    ++count;
  }
  for (auto& v : acc) v /= static_cast<double>(count);
  return acc;
}

namespace detail {

inline float to_sic(double v, std::uint8_t land) {
  return land ? 0.0f : static_cast<float>(std::clamp(v, 0.0, 1.0));
}

inline ForecastSet blank_forecast(const GridSeries& g, Month init, std::size_t leads) {
  if (leads == 0) throw UsageError("baseline: lead count must be positive");
  return {init, leads, g.height, g.width, std::vector<float>(leads * g.cells())};
}

}  // namespace detail

/// Per-cell coefficients [leads, cells] applied to the last observed
/// anomaly; 1 everywhere gives anomaly persistence, 0 gives climatology.
inline ForecastSet damped_forecast(const GridSeries& g, Month init, std::size_t leads,
                                   std::span<const double> coefficients, std::size_t years = kClimatologyYears) {
  if (coefficients.size() != leads * g.cells()) throw ShapeError("damped_forecast: coefficient grid size");
  auto out = detail::blank_forecast(g, init, leads);
  const Month last = init.plus(-1);
  const auto last_clim = sliding_climatology(g, init, last.month, years);
  const auto obs = g.field_at(last);
  for (std::size_t l = 1; l <= leads; ++l) {
    const auto clim = sliding_climatology(g, init, out.target(l).month, years);
    auto map = out.map(l);
    for (std::size_t i = 0; i < g.cells(); ++i) {
      const double anomaly = static_cast<double>(obs[i]) - last_clim[i];
      map[i] = detail::to_sic(clim[i] + coefficients[(l - 1) * g.cells() + i] * anomaly, g.land[i]);
    }
  }
  return out;
}

/// Target-month sliding climatology plus the undamped anomaly of the last
/// observed month.
inline ForecastSet anomaly_persistence(const GridSeries& g, Month init, std::size_t leads,
                                       std::size_t years = kClimatologyYears) {
  const std::vector<double> ones(leads * g.cells(), 1.0);
  return damped_forecast(g, init, leads, ones, years);
}

/// r_l per cell: correlation between anomalies of the last observed calendar
/// month and of the month l steps later, over historical years wholly before
/// `init`. Anomalies are taken against the climatology of all prior data.
/// Clipped to [0,1]; a cell with no variance gets 0.
inline std::vector<double> damped_coefficients(const GridSeries& g, Month init, std::size_t leads,
                                               std::size_t min_pairs = 10) {
  const std::size_t n = g.cells();
  std::array<std::vector<double>, 12> clim;
  std::array<std::size_t, 12> counts{};
  for (auto& c : clim) c.assign(n, 0.0);
  for (std::size_t t = 0; t < g.steps() && g.months[t] < init; ++t) {
    const auto f = g.field(t);
    auto& c = clim[g.months[t].month - 1];
    for (std::size_t i = 0; i < n; ++i) c[i] += f[i];
    ++counts[g.months[t].month - 1];
  }
  for (int m = 0; m < 12; ++m) if (counts[m]) for (auto& v : clim[m]) v /= static_cast<double>(counts[m]);

  const Month last = init.plus(-1);
  std::vector<double> out(leads * n, 0.0);
  for (std::size_t l = 1; l <= leads; ++l) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (long back = 1;; ++back) {
      const Month a = last.plus(-12 * back), b = a.plus(static_cast<long>(l));
      if (!(b < init)) continue;
      const auto ta = g.index_of(a), tb = g.index_of(b);
      if (!ta || !tb) break;
      pairs.emplace_back(*ta, *tb);
    }
    if (pairs.size() < min_pairs) {
      throw DataError("damped persistence for " + init.str() + ": " + std::to_string(pairs.size()) +
                      " historical pairs at lead " + std::to_string(l) + ", need " + std::to_string(min_pairs));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (auto [ta, tb] : pairs) {
        const double xa = g.field(ta)[i] - clim[g.months[ta].month - 1][i];
        const double xb = g.field(tb)[i] - clim[g.months[tb].month - 1][i];
        sa += xa;
        sb += xb;
        saa += xa * xa;
        sbb += xb * xb;
        sab += xa * xb;
      }
      const double k = static_cast<double>(pairs.size());
      const double cov = sab - sa * sb / k, va = saa - sa * sa / k, vb = sbb - sb * sb / k;
      const double r = va > 1e-18 && vb > 1e-18 ? cov / std::sqrt(va * vb) : 0.0;
      out[(l - 1) * n + i] = std::clamp(r, 0.0, 1.0);
    }
  }
  return out;
}

inline ForecastSet damped_persistence(const GridSeries& g, Month init, std::size_t leads) {
  return damped_forecast(g, init, leads, damped_coefficients(g, init, leads));
}

/// Per cell and target calendar month: least-squares line through that
/// month's values in all years before `init`, extrapolated to the target year.
inline ForecastSet trend_climatology(const GridSeries& g, Month init, std::size_t leads) {
  auto out = detail::blank_forecast(g, init, leads);
  for (std::size_t l = 1; l <= leads; ++l) {
    const Month target = out.target(l);
    std::vector<std::size_t> steps;
    std::vector<double> years;
    for (std::size_t t = 0; t < g.steps() && g.months[t] < init; ++t) {
      if (g.months[t].month != target.month) continue;
      steps.push_back(t);
      years.push_back(g.months[t].year);
    }
    if (steps.size() < 3) {
      throw DataError("trend climatology for " + init.str() + ": " + std::to_string(steps.size()) +
                      " prior samples of calendar month " + std::to_string(target.month) + ", need 3");
    }
    std::vector<double> y(steps.size());
    auto map = out.map(l);
    for (std::size_t i = 0; i < g.cells(); ++i) {
      for (std::size_t k = 0; k < steps.size(); ++k) y[k] = g.field(steps[k])[i];
      map[i] = detail::to_sic(fit_line(years, y).at(target.year), g.land[i]);
    }
  }
  return out;
}

}  // namespace icemamba
