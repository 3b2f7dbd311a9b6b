#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icemamba/binary_io.hpp"
#include "icemamba/preprocess.hpp"

namespace icemamba {

inline constexpr double kEdgeThreshold = 0.15;
inline constexpr double kCellAreaKm2 = 625.0;

enum class ErrorKind { mae, rmse };

namespace detail {

inline void require_pair(std::size_t a, std::size_t b, std::size_t mask, const char* what) {
  if (a != b || a != mask) {
    throw ShapeError(std::string(what) + ": field sizes " + std::to_string(a) + " and " + std::to_string(b) +
                     " with mask of " + std::to_string(mask));
  }
}

}  // namespace detail

/// Mean absolute or root-mean-square difference over cells where mask != 0,
/// in percent SIC.
inline double masked_error(std::span<const float> pred, std::span<const float> obs, std::span<const std::uint8_t> mask,
                           ErrorKind kind) {
  detail::require_pair(pred.size(), obs.size(), mask.size(), "masked_error");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double d = static_cast<double>(pred[i]) - obs[i];
    acc += kind == ErrorKind::mae ? std::abs(d) : d * d;
    ++n;
  }
  if (n == 0) throw DataError("masked_error: empty mask");
  const double mean = acc / static_cast<double>(n);
  return 100.0 * (kind == ErrorKind::mae ? mean : std::sqrt(mean));
}

struct EdgeError {
  double iiee = 0.0;
  double oe = 0.0;  // forecast ice, observed water
  double ue = 0.0;  // forecast water, observed ice
};

/// Integrated ice-edge error over cells where mask != 0; ice means SIC >= threshold.
inline EdgeError iiee(std::span<const float> pred, std::span<const float> obs, std::span<const std::uint8_t> mask,
                      double threshold = kEdgeThreshold, double cell_area = kCellAreaKm2) {
  detail::require_pair(pred.size(), obs.size(), mask.size(), "iiee");
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("iiee: threshold must lie in (0,1)");
  std::size_t over = 0, under = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const bool p = pred[i] >= threshold, o = obs[i] >= threshold;
    over += p && !o;
    under += !p && o;
  }
  const double oe = static_cast<double>(over) * cell_area, ue = static_cast<double>(under) * cell_area;
  return {oe + ue, oe, ue};
}

/// Spatial Pearson correlation of two anomaly fields over the mask.
inline double acc(std::span<const double> pred_anomaly, std::span<const double> obs_anomaly,
                  std::span<const std::uint8_t> mask) {
  detail::require_pair(pred_anomaly.size(), obs_anomaly.size(), mask.size(), "acc");
  double sp = 0, so = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    sp += pred_anomaly[i];
    so += obs_anomaly[i];
    ++n;
  }
  if (n < 2) throw DataError("acc: need at least 2 masked cells, got " + std::to_string(n));
  const double mp = sp / static_cast<double>(n), mo = so / static_cast<double>(n);
  double cov = 0, vp = 0, vo = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double dp = pred_anomaly[i] - mp, dobs = obs_anomaly[i] - mo;
    cov += dp * dobs;
    vp += dp * dp;
    vo += dobs * dobs;
  }
  if (vp == 0.0 || vo == 0.0) {
    throw DataError(std::string("acc: zero variance in the ") + (vp == 0.0 ? "forecast" : "observed") +
                    " anomaly field");
  }
  return cov / std::sqrt(vp * vo);
}

/// Ocean cells whose interannual SIC standard deviation for `calendar_month`
/// (population form, over the years present in [first, last]) exceeds `threshold`.
inline Mask variability_mask(const GridSeries& obs, int calendar_month, double threshold = 0.10,
                             std::optional<Month> first = std::nullopt, std::optional<Month> last = std::nullopt) {
  std::vector<std::size_t> steps;
  for (std::size_t t = 0; t < obs.steps(); ++t) {
    const Month m = obs.months[t];
    if (m.month != calendar_month) continue;
    if ((first && m < *first) || (last && *last < m)) continue;
    steps.push_back(t);
  }
  if (steps.size() < 3) {
    throw DataError("variability_mask: " + std::to_string(steps.size()) + " years of calendar month " +
                    std::to_string(calendar_month) + ", need 3");
  }
  Mask out(obs.cells(), 0);
  const double k = static_cast<double>(steps.size());
  for (std::size_t i = 0; i < obs.cells(); ++i) {
    if (obs.land[i]) continue;
    double s = 0, sq = 0;
    for (auto t : steps) s += obs.field(t)[i];
    const double mean = s / k;
    for (auto t : steps) sq += (obs.field(t)[i] - mean) * (obs.field(t)[i] - mean);
    out[i] = std::sqrt(sq / k) > threshold;
  }
  return out;
}

struct MetricEntry {
  std::string metric;  // mae, rmse, iiee, oe, ue, acc
  Month init;
  std::size_t lead = 1;
  Month target;
  double value = 0.0;
};

inline const char* metric_unit(const std::string& metric) {
  if (metric == "mae" || metric == "rmse") return "percent";
  if (metric == "iiee" || metric == "oe" || metric == "ue") return "km2";
  return "dimensionless";
}

struct MetricTable {
  std::string mask_id = "ocean";
  double cell_area = kCellAreaKm2;
  std::vector<MetricEntry> entries;

  void add(std::string metric, Month init, std::size_t lead, double value) {
    entries.push_back({std::move(metric), init, lead, init.plus(static_cast<long>(lead) - 1), value});
  }

  std::optional<double> mean(const std::string& metric) const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& e : entries) {
      if (e.metric != metric) continue;
      s += e.value;
      ++n;
    }
    if (!n) return std::nullopt;
    return s / static_cast<double>(n);
  }
};

/// Grid of means: rows target calendar month 1..12, columns lead 1..k;
/// cells with no entries are absent.
using Heatmap = std::vector<std::vector<std::optional<double>>>;

inline Heatmap aggregate_heatmap(const MetricTable& table, const std::string& metric, std::size_t leads) {
  std::vector<std::vector<double>> sum(12, std::vector<double>(leads, 0.0));
  std::vector<std::vector<std::size_t>> count(12, std::vector<std::size_t>(leads, 0));
  for (const auto& e : table.entries) {
    if (e.metric != metric || e.lead < 1 || e.lead > leads) continue;
    sum[e.target.month - 1][e.lead - 1] += e.value;
    ++count[e.target.month - 1][e.lead - 1];
  }
  Heatmap out(12, std::vector<std::optional<double>>(leads));
  for (std::size_t m = 0; m < 12; ++m)
    for (std::size_t l = 0; l < leads; ++l)
      if (count[m][l]) out[m][l] = sum[m][l] / static_cast<double>(count[m][l]);
  return out;
}

/// Mean per target calendar month over all leads and years.
inline std::vector<std::optional<double>> seasonal_cycle(const MetricTable& table, const std::string& metric) {
  std::vector<double> sum(12, 0.0);
  std::vector<std::size_t> count(12, 0);
  for (const auto& e : table.entries) {
    if (e.metric != metric) continue;
    sum[e.target.month - 1] += e.value;
    ++count[e.target.month - 1];
  }
  std::vector<std::optional<double>> out(12);
  for (std::size_t m = 0; m < 12; ++m) if (count[m]) out[m] = sum[m] / static_cast<double>(count[m]);
  return out;
}

inline std::string format_value(std::optional<double> v) {
  if (!v) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const MetricTable& table) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "metric,unit,mask,init,lead,target,value\n";
    for (const auto& e : table.entries) {
      os << e.metric << ',' << metric_unit(e.metric) << ',' << table.mask_id << ',' << e.init.str() << ','
         << e.lead << ',' << e.target.str() << ',' << format_value(e.value) << '\n';
    }
  });
}

/// One block per metric: rows are target months, columns lead_1..lead_k.
inline void write_heatmap_csv(const std::string& path, const MetricTable& table,
                              const std::vector<std::string>& metrics, std::size_t leads) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "metric,unit,target_month";
    for (std::size_t l = 1; l <= leads; ++l) os << ",lead_" << l;
    os << '\n';
    for (const auto& metric : metrics) {
      const auto grid = aggregate_heatmap(table, metric, leads);
      for (std::size_t m = 0; m < 12; ++m) {
        os << metric << ',' << metric_unit(metric) << ',' << m + 1;
        for (const auto& v : grid[m]) os << ',' << format_value(v);
        os << '\n';
      }
    }
  });
}

/// Rows target_month 1..12, one column per metric (means over leads and years).
inline void write_seasonal_csv(const std::string& path, const MetricTable& table,
                               const std::vector<std::string>& metrics) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "target_month";
    for (const auto& m : metrics) os << ',' << m << '_' << metric_unit(m);
    os << '\n';
    std::vector<std::vector<std::optional<double>>> cycles;
    for (const auto& m : metrics) cycles.push_back(seasonal_cycle(table, m));
    for (std::size_t month = 0; month < 12; ++month) {
      os << month + 1;
      for (const auto& c : cycles) os << ',' << format_value(c[month]);
      os << '\n';
    }
  });
}

/// Scores forecasts (already clamped, land 0) against observations on the
/// ocean mask. ACC uses anomalies against `reference` climatology; a field
/// pair with no anomaly variance leaves its ACC entry absent.
inline void score_forecast(MetricTable& table, const ForecastSet& f, const GridSeries& obs,
                           const Climatology& reference, std::span<const std::uint8_t> mask,
                           double threshold = kEdgeThreshold) {
  for (std::size_t l = 1; l <= f.leads; ++l) {
    const Month target = f.target(l);
    const auto o = obs.field_at(target);
    const auto p = f.map(l);
    table.add("mae", f.init, l, masked_error(p, o, mask, ErrorKind::mae));
    table.add("rmse", f.init, l, masked_error(p, o, mask, ErrorKind::rmse));
    const auto e = iiee(p, o, mask, threshold, table.cell_area);
    table.add("iiee", f.init, l, e.iiee);
    table.add("oe", f.init, l, e.oe);
    table.add("ue", f.init, l, e.ue);
    const auto clim = reference.month(target.month);
    std::vector<double> pa(p.size()), oa(o.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      pa[i] = p[i] - clim[i];
      oa[i] = o[i] - clim[i];
    }
    try {
      table.add("acc", f.init, l, acc(pa, oa, mask));
    } catch (const DataError&) {
    }
  }
}

}  // namespace icemamba
