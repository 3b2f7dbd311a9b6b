#pragma once

#include <cmath>
#include <deque>
#include <numbers>
#include <span>
#include <vector>

#include "icemamba/error.hpp"

namespace icemamba {

inline constexpr double kEarthRadius = 6371228.0;

struct PlanePoint {
  double x = 0.0;
  double y = 0.0;
};

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
};

/// North-polar spherical Lambert azimuthal equal-area projection.
inline PlanePoint laea_forward(double lat_deg, double lon_deg) {
  if (!(lat_deg > 0.0 && lat_deg <= 90.0)) {
    throw DataError("laea_forward: latitude " + std::to_string(lat_deg) + " outside the northern hemisphere");
  }
  const double phi = lat_deg * std::numbers::pi / 180.0;
  const double lam = lon_deg * std::numbers::pi / 180.0;
  const double rho = 2.0 * kEarthRadius * std::sin(std::numbers::pi / 4.0 - phi / 2.0);
  return {rho * std::sin(lam), -rho * std::cos(lam)};
}

inline GeoPoint laea_inverse(double x, double y) {
  const double rho = std::hypot(x, y);
  const double arg = rho / (2.0 * kEarthRadius);
  if (arg > 1.0) throw DataError("laea_inverse: point beyond the projection's antipodal limit");
  const double phi = std::numbers::pi / 2.0 - 2.0 * std::asin(arg);
  const double lam = rho == 0.0 ? 0.0 : std::atan2(x, -y);
  return {phi * 180.0 / std::numbers::pi, lam * 180.0 / std::numbers::pi};
}

/// Regular projected grid; row 0 is the top (largest y).
struct PlaneGrid {
  std::size_t rows = 448;
  std::size_t cols = 304;
  double cell = 25000.0;
  double x0 = -3850000.0;  // left edge
  double y0 = 5850000.0;   // top edge

  PlanePoint center(std::size_t r, std::size_t c) const {
    return {x0 + (static_cast<double>(c) + 0.5) * cell, y0 - (static_cast<double>(r) + 0.5) * cell};
  }
  double cell_area_km2() const { return cell * cell / 1e6; }
};

/// Regular latitude-longitude source grid. Latitudes may run in either
/// direction; longitudes wrap with period 360.
struct LatLonGrid {
  double lat0 = 0.0;
  double dlat = 0.25;
  std::size_t nlat = 0;
  double lon0 = 0.0;
  double dlon = 0.25;
  std::size_t nlon = 0;
  std::vector<double> values;  // [nlat, nlon]

  double at(std::size_t i, std::size_t j) const { return values[i * nlon + j]; }
};

/// Bilinear value in (lat, lon) index space; false when outside coverage.
inline bool bilinear_sample(const LatLonGrid& g, double lat, double lon, double& out) {
  const double fi = (lat - g.lat0) / g.dlat;
  if (!(fi >= 0.0 && fi <= static_cast<double>(g.nlat - 1))) return false;
  double fj = std::fmod((lon - g.lon0) / g.dlon, 360.0 / g.dlon);
  if (fj < 0) fj += 360.0 / g.dlon;
  const bool wraps = std::abs(g.dlon * static_cast<double>(g.nlon) - 360.0) < 1e-9;
  if (!wraps && fj > static_cast<double>(g.nlon - 1)) return false;
  auto i0 = static_cast<std::size_t>(std::floor(fi));
  auto j0 = static_cast<std::size_t>(std::floor(fj));
  if (i0 == g.nlat - 1 && g.nlat > 1) --i0;
  if (!wraps && j0 == g.nlon - 1 && g.nlon > 1) --j0;
  const double ti = g.nlat > 1 ? fi - static_cast<double>(i0) : 0.0;
  const double tj = fj - static_cast<double>(j0);
  const std::size_t i1 = std::min(i0 + 1, g.nlat - 1);
  const std::size_t j1 = (j0 + 1) % g.nlon;
  const double top = (1 - tj) * g.at(i0, j0) + tj * g.at(i0, j1);
  const double bottom = (1 - tj) * g.at(i1, j0) + tj * g.at(i1, j1);
  out = (1 - ti) * top + ti * bottom;
  return std::isfinite(out);
}

/// Bilinear interpolation at each target cell centre's (lat, lon). Cells the
/// source does not cover take the value of the nearest covered cell
/// (breadth-first over the 4-neighbourhood). `covered`, when given,
/// receives 1 for interpolated cells.
inline std::vector<double> regrid_bilinear(const LatLonGrid& src, const PlaneGrid& dst,
                                           std::vector<std::uint8_t>* covered = nullptr) {
  if (src.nlat == 0 || src.nlon == 0 || src.values.size() != src.nlat * src.nlon) {
    throw ShapeError("regrid_bilinear: source grid is empty or inconsistent");
  }
  const std::size_t n = dst.rows * dst.cols;
  std::vector<double> out(n, 0.0);
  std::vector<std::uint8_t> ok(n, 0);
  std::deque<std::size_t> frontier;
  for (std::size_t r = 0; r < dst.rows; ++r) {
    for (std::size_t c = 0; c < dst.cols; ++c) {
      const auto p = dst.center(r, c);
      const auto geo = laea_inverse(p.x, p.y);
      const std::size_t i = r * dst.cols + c;
      if (bilinear_sample(src, geo.lat, geo.lon, out[i])) {
        ok[i] = 1;
        frontier.push_back(i);
      }
    }
  }
  if (frontier.empty()) throw DataError("regrid_bilinear: source covers no target cell");
  if (covered) *covered = ok;
  std::vector<std::uint8_t> done = ok;
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    const std::size_t r = i / dst.cols, c = i % dst.cols;
    const std::size_t nb[4] = {r > 0 ? i - dst.cols : n, r + 1 < dst.rows ? i + dst.cols : n,
                               c > 0 ? i - 1 : n, c + 1 < dst.cols ? i + 1 : n};
    for (std::size_t j : nb) {
      if (j == n || done[j]) continue;
      done[j] = 1;
      out[j] = out[i];
      frontier.push_back(j);
    }
  }
  return out;
}

}  // namespace icemamba
