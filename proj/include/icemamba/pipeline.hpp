#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "icemamba/baselines.hpp"
#include "icemamba/checkpoint.hpp"
#include "icemamba/config.hpp"
#include "icemamba/explain.hpp"
#include "icemamba/grid.hpp"
#include "icemamba/metrics.hpp"
#include "icemamba/synthetic.hpp"
#include "icemamba/training.hpp"

namespace icemamba {

/// Observed series (SIC preprocessed) plus the covariates the model reads.
struct Dataset {
  SeriesSet raw;
  Mask land;
  std::vector<VariableSpec> covariates;

  const GridSeries& sic() const { return series_for(raw, std::string(kSic)); }
  Mask ocean() const { return invert(land); }
};

inline Dataset dataset_from(const SyntheticData& s) { return {s.series, s.land, s.covariates}; }

inline std::string grid_path(const std::string& dir, const std::string& variable) {
  return (std::filesystem::path(dir) / (variable + ".imgr")).string();
}

/// Reads <dir>/siconc.imgr and <dir>/<id>.imgr for each covariate.
inline Dataset load_dataset(const std::string& dir, const std::vector<VariableSpec>& covariates) {
  Dataset d;
  d.covariates = covariates;
  auto sic = read_grid(grid_path(dir, std::string(kSic)));
  preprocess_sic(sic);
  d.land = sic.land;
  for (const auto& spec : covariates) {
    auto g = read_grid(grid_path(dir, spec.id));
    if (g.height != sic.height || g.width != sic.width) {
      throw DataError("variable '" + spec.id + "' grid " + std::to_string(g.height) + "x" +
                      std::to_string(g.width) + " differs from siconc");
    }
    d.raw.emplace(spec.id, std::move(g));
  }
  d.raw.emplace(std::string(kSic), std::move(sic));
  return d;
}

inline std::vector<std::string> save_dataset(const std::string& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (const auto& [id, g] : d.raw) {
    paths.push_back(grid_path(dir, id));
    write_grid(paths.back(), g);
  }
  return paths;
}

inline Dataset make_dataset(const RunConfig& cfg) {
  if (cfg.data.synthetic) {
    auto d = dataset_from(generate_synthetic(cfg.data.synth));
    d.covariates = cfg.data.covariates;
    for (const auto& spec : d.covariates) series_for(d.raw, spec.id);
    return d;
  }
  return load_dataset(cfg.data.dir, cfg.data.covariates);
}

/// Every month from the start of training to the end of the test years must
/// be present in the observed SIC record.
inline void require_coverage(const Dataset& d, const Splits& splits) {
  const auto& sic = d.sic();
  for (long m = splits.train.begin().index(); m <= splits.test.end().index(); ++m) {
    if (!sic.index_of(Month::from_index(m))) {
      throw DataError("siconc record (" + sic.months.front().str() + ".." + sic.months.back().str() +
                      ") does not cover " + Month::from_index(m).str() + " required by splits " +
                      splits.train.str() + " / " + splits.valid.str() + " / " + splits.test.str());
    }
  }
}

/// Held-out initialisations: inputs and targets inside the test years when
/// the range is long enough, otherwise every init whose targets fall in it.
inline std::vector<Month> evaluation_inits(const Splits& splits, std::size_t leads, std::size_t history) {
  auto inits = sample_inits(splits.test, leads, history);
  if (!inits.empty()) return inits;
  for (long m = splits.test.begin().index(); m + static_cast<long>(leads) - 1 <= splits.test.end().index(); ++m) {
    inits.push_back(Month::from_index(m));
  }
  if (inits.empty()) throw UsageError("test years " + splits.test.str() + " are shorter than the lead count");
  return inits;
}

/// Inputs prepared with statistics fitted on the training years.
inline PreparedInputs prepare_for(const Dataset& d, const Splits& splits) {
  return prepare_inputs(d.raw, d.covariates, splits.train.begin(), splits.train.end());
}

inline TrainingData training_data(const Dataset& d, const PreparedInputs& prepared, const Splits& splits,
                                  std::size_t leads) {
  TrainingData t;
  t.inputs = &prepared.series;
  t.sic = &d.sic();
  t.specs = d.covariates;
  t.ocean = d.ocean();
  t.train_inits = sample_inits(splits.train, leads, max_lag(d.covariates));
  t.valid_inits = sample_inits(splits.valid, leads, max_lag(d.covariates));
  return t;
}

template <class T>
struct TrainedModel {
  IceMamba<T> model;
  TrainResult result;
  PreparedInputs prepared;
};

template <class T>
TrainedModel<T> train_model(const Dataset& d, const Splits& splits, ModelConfig model_cfg, const TrainConfig& train_cfg,
                            const std::function<void(const EpochRecord&)>& progress = {}) {
  model_cfg.input_channels = sample_layout(d.covariates).size();
  TrainedModel<T> out{IceMamba<T>::build(model_cfg, train_cfg.seed), {}, prepare_for(d, splits)};
  const auto data = training_data(d, out.prepared, splits, model_cfg.lead_count);
  out.result = train_loop(out.model, data, train_cfg, progress);
  return out;
}

/// Direct forecasts for each initialisation.
template <Forecaster M>
std::vector<ForecastSet> forecast_inits(const M& model, const Dataset& d, const PreparedInputs& prepared,
                                        const std::vector<Month>& inits) {
  std::vector<ForecastSet> out;
  for (const auto& init : inits) {
    out.push_back(forecast_direct(model, assemble_sample(init, d.covariates, prepared.series), d.land, init));
  }
  return out;
}

enum class BaselineKind { anomaly_persistence, damped_persistence, trend_climatology };

inline const char* baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::anomaly_persistence: return "anomaly_persistence";
    case BaselineKind::damped_persistence: return "damped_persistence";
    case BaselineKind::trend_climatology: return "trend_climatology";
  }
  return "?";
}

inline ForecastSet baseline_forecast(BaselineKind k, const GridSeries& sic, Month init, std::size_t leads) {
  switch (k) {
    case BaselineKind::anomaly_persistence: return anomaly_persistence(sic, init, leads);
    case BaselineKind::damped_persistence: return damped_persistence(sic, init, leads);
    case BaselineKind::trend_climatology: return trend_climatology(sic, init, leads);
  }
  throw ContractError("unknown baseline");
}

/// Scores forecast sets on the ocean mask; ACC anomalies are taken against
/// the training-window climatology.
inline MetricTable score_all(const std::vector<ForecastSet>& forecasts, const Dataset& d, const Splits& splits,
                             const MetricConfig& mc = {}) {
  MetricTable table;
  table.cell_area = mc.cell_area;
  const auto clim = fit_climatology(d.sic(), splits.train.begin(), splits.train.end());
  const auto ocean = d.ocean();
  for (const auto& f : forecasts) score_forecast(table, f, d.sic(), clim, ocean, mc.edge_threshold);
  return table;
}

/// Mean masked MAE (percent) over every (init, lead) of a forecast list.
inline double mean_mae(const std::vector<ForecastSet>& forecasts, const Dataset& d) {
  const auto ocean = d.ocean();
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& f : forecasts) {
    for (std::size_t l = 1; l <= f.leads; ++l) {
      total += masked_error(f.map(l), d.sic().field_at(f.target(l)), ocean, ErrorKind::mae);
      ++n;
    }
  }
  if (!n) throw UsageError("mean_mae: no forecasts");
  return total / static_cast<double>(n);
}

inline EvalSet eval_set_for(const Dataset& d, const PreparedInputs& prepared, const std::vector<Month>& inits,
                            std::size_t leads) {
  TrainingData t;
  t.inputs = &prepared.series;
  t.sic = &d.sic();
  t.specs = d.covariates;
  t.ocean = d.ocean();
  return make_eval_set(t, inits, leads, d.land);
}

/// The same dataset with one variable replaced by its per-cell linear
/// detrend over the full record.
inline Dataset detrended(const Dataset& d, const std::string& variable) {
  Dataset out = d;
  auto it = out.raw.find(variable);
  if (it == out.raw.end()) throw UsageError("cannot detrend unknown variable '" + variable + "'");
  if (variable == kSic) throw UsageError("detrending siconc is not supported; pick a covariate");
  it->second = detrend_linear(it->second);
  return out;
}

struct ForecastRecord {
  Month init;
  std::size_t lead = 1;
  Month target;
  std::string path;  // relative to the index file's directory
};

/// Writes one IMGR file per initialisation under `dir` and an index CSV
/// (init, lead, target, path) at `index_path`. Returns every file written.
inline std::vector<std::string> write_forecasts(const std::string& index_path, const std::string& dir,
                                                const std::vector<ForecastSet>& forecasts, const Mask& land) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(index_path).parent_path();
  fs::create_directories(dir);
  std::vector<std::string> written;
  std::vector<ForecastRecord> rows;
  for (const auto& f : forecasts) {
    GridSeries g;
    g.variable = std::string(kSic);
    g.units = "fraction";
    g.height = f.height;
    g.width = f.width;
    for (std::size_t l = 1; l <= f.leads; ++l) g.months.push_back(f.target(l));
    g.values = f.maps;
    g.land = land;
    const auto path = (fs::path(dir) / (f.init.str() + ".imgr")).string();
    write_grid(path, g);
    written.push_back(path);
    const auto rel = fs::relative(path, base.empty() ? fs::path(".") : base).generic_string();
    for (std::size_t l = 1; l <= f.leads; ++l) rows.push_back({f.init, l, f.target(l), rel});
  }
  io::write_atomically(index_path, [&](std::ostream& os) {
    os << "init_month,lead,target,path\n";
    for (const auto& r : rows) os << r.init.str() << ',' << r.lead << ',' << r.target.str() << ',' << r.path << '\n';
  });
  written.push_back(index_path);
  return written;
}

/// Reads a forecast index and the grids it references. Every init must list
/// leads 1..k contiguously.
inline std::vector<ForecastSet> read_forecasts(const std::string& index_path, std::vector<std::string>* files = nullptr) {
  namespace fs = std::filesystem;
  std::ifstream in(index_path);
  if (!in) throw DataError("cannot read forecast index '" + index_path + "'");
  std::string line;
  std::getline(in, line);
  if (line != "init_month,lead,target,path") throw DataError("'" + index_path + "' is not a forecast index");
  std::map<Month, std::vector<ForecastRecord>> by_init;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 4) throw DataError(index_path + ":" + std::to_string(lineno) + ": expected 4 columns");
    ForecastRecord r{Month::parse(cols[0]), 0, Month::parse(cols[2]), cols[3]};
    try {
      r.lead = std::stoul(cols[1]);
    } catch (const std::exception&) {
      throw DataError(index_path + ":" + std::to_string(lineno) + ": bad lead '" + cols[1] + "'");
    }
    if (r.lead == 0 || r.init.plus(static_cast<long>(r.lead) - 1) != r.target) {
      throw DataError(index_path + ":" + std::to_string(lineno) + ": target does not match init and lead");
    }
    by_init[r.init].push_back(r);
  }
  if (by_init.empty()) throw DataError("forecast index '" + index_path + "' lists no forecasts");
  const fs::path base = fs::path(index_path).parent_path();
  std::vector<ForecastSet> out;
  for (const auto& [init, rows] : by_init) {
    ForecastSet f{init, rows.size(), 0, 0, {}};
    std::map<std::string, GridSeries> grids;
    for (std::size_t l = 1; l <= rows.size(); ++l) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const ForecastRecord& r) { return r.lead == l; });
      if (it == rows.end()) throw DataError("forecast for " + init.str() + " is missing lead " + std::to_string(l));
      const auto path = (base / it->path).string();
      if (!grids.count(path)) {
        grids.emplace(path, read_grid(path));
        if (files) files->push_back(path);
      }
      const auto& g = grids.at(path);
      if (f.maps.empty()) {
        f.height = g.height;
        f.width = g.width;
        f.maps.resize(rows.size() * g.cells());
      } else if (g.height != f.height || g.width != f.width) {
        throw DataError("forecast grids for " + init.str() + " disagree in shape");
      }
      const auto field = g.field_at(it->target);
      std::copy(field.begin(), field.end(), f.map(l).begin());
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace icemamba
