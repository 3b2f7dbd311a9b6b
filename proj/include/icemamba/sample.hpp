#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "icemamba/preprocess.hpp"
#include "icemamba/types.hpp"

namespace icemamba {

inline constexpr std::string_view kSic = "siconc";

struct VariableInfo {
  std::string_view id;
  std::string_view group;
};

inline constexpr std::array<VariableInfo, 15> kVariables{{
    {"siconc", "sea ice"},
    {"t2m", "atmospheric temperature"},
    {"t500", "atmospheric temperature"},
    {"sst", "ocean"},
    {"ohc300", "ocean"},
    {"ohc700", "ocean"},
    {"mld001", "ocean"},
    {"mld003", "ocean"},
    {"ussr", "radiation"},
    {"dssr", "radiation"},
    {"gp500", "pressure"},
    {"gp250", "pressure"},
    {"u10m", "wind"},
    {"v10m", "wind"},
    {"u10", "wind"},
}};

inline std::string_view variable_group(std::string_view id) {
  for (const auto& v : kVariables) if (v.id == id) return v.group;
  throw UsageError("unknown variable '" + std::string(id) + "'");
}

struct VariableSpec {
  std::string id;
  std::string group;
  std::size_t lag_count = 3;
  bool anomaly = false;
  bool normalize = true;

  void validate() const {
    if (variable_group(id) != group) throw UsageError("variable '" + id + "' belongs to group '" +
                                                      std::string(variable_group(id)) + "'");
    if (id == kSic) {
      if (lag_count != kSicLags) throw UsageError("siconc must use 12 lags");
    } else if (lag_count != 1 && lag_count != 3) {
      throw UsageError("variable '" + id + "': lag count must be 1 or 3, got " + std::to_string(lag_count));
    }
  }
};

/// Default flags: anomalies for ocean heat content, mixed layer depth,
/// geopotential and u10; every non-SIC variable normalized; SIC kept raw.
inline VariableSpec make_variable(const std::string& id, std::size_t lags = 3) {
  VariableSpec v{id, std::string(variable_group(id)), id == kSic ? kSicLags : lags, false, id != kSic};
  v.anomaly = id.starts_with("ohc") || id.starts_with("mld") || id.starts_with("gp") || id == "u10";
  v.validate();
  return v;
}

/// All fourteen non-SIC predictors at `lags` lags.
inline std::vector<VariableSpec> all_covariates(std::size_t lags = 3) {
  std::vector<VariableSpec> out;
  for (const auto& v : kVariables) if (v.id != kSic) out.push_back(make_variable(std::string(v.id), lags));
  return out;
}

struct ChannelKey {
  std::string variable;
  std::size_t lag = 1;

  std::string label() const { return variable + " (" + std::to_string(lag) + ")"; }
  bool operator==(const ChannelKey&) const = default;
};

/// Channel order: siconc lags 1..12, then each covariate's lags in spec
/// order. A siconc entry in `specs` is accepted and folded into the SIC block.
inline std::vector<ChannelKey> sample_layout(const std::vector<VariableSpec>& specs) {
  std::vector<ChannelKey> out;
  for (std::size_t l = 1; l <= kSicLags; ++l) out.push_back({std::string(kSic), l});
  std::vector<std::string> seen;
  for (const auto& s : specs) {
    s.validate();
    if (s.id == kSic) continue;
    if (std::find(seen.begin(), seen.end(), s.id) != seen.end()) {
      throw UsageError("variable '" + s.id + "' listed twice");
    }
    seen.push_back(s.id);
    for (std::size_t l = 1; l <= s.lag_count; ++l) out.push_back({s.id, l});
  }
  return out;
}

inline std::size_t channel_index(const std::vector<ChannelKey>& layout, const std::string& variable,
                                 std::size_t lag) {
  for (std::size_t c = 0; c < layout.size(); ++c) {
    if (layout[c].variable == variable && layout[c].lag == lag) return c;
  }
  throw UsageError("channel '" + variable + " (" + std::to_string(lag) + ")' is not in the sample layout");
}

using SeriesSet = std::map<std::string, GridSeries>;

inline const GridSeries& series_for(const SeriesSet& set, const std::string& id) {
  auto it = set.find(id);
  if (it == set.end()) throw DataError("no series for variable '" + id + "'");
  return it->second;
}

/// Stacks lagged fields: lag l of a sample initialised at `init` is the
/// field for month init - l.
inline InputStack assemble_sample(Month init, const std::vector<VariableSpec>& specs, const SeriesSet& set) {
  const auto layout = sample_layout(specs);
  const auto& sic = series_for(set, std::string(kSic));
  InputStack out{layout.size(), sic.height, sic.width, {}};
  out.values.reserve(layout.size() * sic.cells());
  for (const auto& key : layout) {
    const auto& g = series_for(set, key.variable);
    if (g.height != sic.height || g.width != sic.width) {
      throw ShapeError("variable '" + key.variable + "' grid differs from siconc");
    }
    const auto f = g.field_at(init.plus(-static_cast<long>(key.lag)));
    out.values.insert(out.values.end(), f.begin(), f.end());
  }
  return out;
}

/// Observed SIC for leads 1..k: months init .. init+k-1, stacked [k,H,W].
inline std::vector<float> target_maps(const GridSeries& sic, Month init, std::size_t leads) {
  std::vector<float> out;
  out.reserve(leads * sic.cells());
  for (std::size_t l = 0; l < leads; ++l) {
    const auto f = sic.field_at(init.plus(static_cast<long>(l)));
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

/// Largest lag any channel reads.
inline std::size_t max_lag(const std::vector<VariableSpec>& specs) {
  std::size_t m = kSicLags;
  for (const auto& s : specs) m = std::max(m, s.lag_count);
  return m;
}

/// Model-ready inputs: anomalies and normalization per the spec flags,
/// all statistics fitted on [fit_first, fit_last].
struct PreparedInputs {
  SeriesSet series;
  std::vector<NormStats> stats;
  std::map<std::string, Climatology> climatologies;
};

inline PreparedInputs prepare_inputs(const SeriesSet& raw, const std::vector<VariableSpec>& specs,
                                     Month fit_first, Month fit_last) {
  PreparedInputs out;
  out.series.emplace(std::string(kSic), series_for(raw, std::string(kSic)));
  for (const auto& s : specs) {
    if (s.id == kSic) continue;
    GridSeries g = series_for(raw, s.id);
    if (s.anomaly) {
      auto clim = fit_climatology(g, fit_first, fit_last);
      g = anomalies(g, clim);
      out.climatologies.emplace(s.id, std::move(clim));
    }
    if (s.normalize) {
      auto stats = fit_norm_stats(g, fit_first, fit_last);
      // A field with no spread in the fit window (e.g. a detrended pure
      // trend) carries no information and becomes an all-zero channel.
      if (stats.std <= 1e-6) {
        std::fill(g.values.begin(), g.values.end(), 0.0f);
        stats.std = 1.0;
        stats.mean = 0.0;
      } else {
        g = normalize(g, stats);
      }
      out.stats.push_back(std::move(stats));
    }
    out.series.emplace(s.id, std::move(g));
  }
  return out;
}

}  // namespace icemamba
