#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "icemamba/sample.hpp"

namespace icemamba {

struct SyntheticConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t years = 30;
  int first_year = 1979;
  std::uint64_t seed = 1;
  double persistence = 0.5;    // month-to-month anomaly memory
  double coupling = 0.05;      // SIC anomaly response to the causal covariate two months earlier
  double noise = 0.02;         // unexplained anomaly forcing
  double trend_per_year = -0.004;
  double smoothing = 2.5;      // spatial correlation length in cells
};

/// SIC plus three covariates on a polar-cap domain:
///   sst   leads the SIC anomaly by two months (causal),
///   gp250 independent red noise,
///   u10   a pure linear trend in time.
struct SyntheticData {
  SeriesSet series;
  Mask land;
  std::vector<VariableSpec> covariates;
};

namespace detail {

inline std::vector<double> smooth_noise(std::size_t h, std::size_t w, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> f(h * w);
  for (auto& v : f) v = normal(rng);
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  auto pass = [&](std::vector<double>& src, bool rows) {
    std::vector<double> dst(src.size());
    const long H = static_cast<long>(h), W = static_cast<long>(w);
    for (long y = 0; y < H; ++y) {
      for (long x = 0; x < W; ++x) {
        double acc = 0.0, norm = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const long yy = rows ? y : y + k, xx = rows ? x + k : x;
          if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
          acc += kernel[k + radius] * src[static_cast<std::size_t>(yy * W + xx)];
          norm += kernel[k + radius];
        }
        dst[static_cast<std::size_t>(y * W + x)] = acc / norm;
      }
    }
    src.swap(dst);
  };
  pass(f, true);
  pass(f, false);
  double mean = 0.0, sq = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  for (double v : f) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(f.size()));
  for (auto& v : f) v = (v - mean) / sd;
  return f;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.years < 15) throw UsageError("synthetic data needs at least 15 years, got " + std::to_string(cfg.years));
  if (cfg.height < 8 || cfg.width < 8) throw UsageError("synthetic grid must be at least 8x8");
  const std::size_t H = cfg.height, W = cfg.width, n = H * W, T = cfg.years * 12;
  std::mt19937_64 rng(cfg.seed);

  SyntheticData out;
  out.land.assign(n, 0);
  std::vector<double> radius(n);
  const double cy = (static_cast<double>(H) - 1) / 2, cx = (static_cast<double>(W) - 1) / 2;
  const double R = 0.45 * static_cast<double>(std::min(H, W));
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const std::size_t i = y * W + x;
      radius[i] = std::hypot(dy, dx) / R;
      const double island = std::hypot(dy - 0.4 * R, dx + 0.3 * R) / R;
      out.land[i] = radius[i] > 1.0 || island < 0.1;
    }
  }

  const auto months = month_range(Month{cfg.first_year, 1}, T);
  auto make = [&](const char* id, const char* units) {
    GridSeries g;
    g.variable = id;
    g.units = units;
    g.height = H;
    g.width = W;
    g.months = months;
    g.values.assign(T * n, 0.0f);
    g.land = out.land;
    return g;
  };
  GridSeries sic = make("siconc", "fraction"), sst = make("sst", "K"), gp = make("gp250", "m"),
             u10 = make("u10", "m s-1");

  const std::size_t spin = 24;
  std::vector<std::vector<double>> drive;  // causal fields, index t + spin
  std::vector<double> anomaly(n, 0.0);
  for (std::size_t t = 0; t < T + spin; ++t) {
    drive.push_back(detail::smooth_noise(H, W, cfg.smoothing, rng));
    const auto eta = detail::smooth_noise(H, W, cfg.smoothing, rng);
    const auto other = detail::smooth_noise(H, W, cfg.smoothing, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double forced = t >= 2 ? drive[t - 2][i] : 0.0;
      anomaly[i] = cfg.persistence * anomaly[i] + cfg.coupling * forced + cfg.noise * eta[i];
    }
    if (t < spin) continue;
    const std::size_t k = t - spin;
    const double year = static_cast<double>(k) / 12.0;
    const double season = std::cos(2 * std::numbers::pi * (static_cast<double>(months[k].month) - 3) / 12);
    auto fs = sic.field(k), ft = sst.field(k), fg = gp.field(k), fu = u10.field(k);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(i % W) / static_cast<double>(W);
      const double clim = 0.8 - 0.5 * radius[i] * radius[i] + 0.12 * season;
      fs[i] = out.land[i] ? 0.0f
                          : static_cast<float>(std::clamp(clim + cfg.trend_per_year * year + anomaly[i], 0.0, 1.0));
      ft[i] = static_cast<float>(271.5 + 1.5 * drive[t][i]);
      fg[i] = static_cast<float>(10400.0 + 40.0 * other[i]);
      fu[i] = static_cast<float>(2.0 + 0.05 * static_cast<double>(k) * (1.0 + 0.5 * x));
    }
  }
  out.series.emplace("siconc", std::move(sic));
  out.series.emplace("sst", std::move(sst));
  out.series.emplace("gp250", std::move(gp));
  out.series.emplace("u10", std::move(u10));
  out.covariates = {make_variable("sst"), make_variable("gp250"), make_variable("u10")};
  return out;
}

}  // namespace icemamba
