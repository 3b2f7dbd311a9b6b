#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "icemamba/metrics.hpp"
#include "icemamba/model.hpp"
#include "icemamba/sample.hpp"
#include "icemamba/splits.hpp"
#include "icemamba/synthetic.hpp"
#include "icemamba/training.hpp"

namespace icemamba {

/// Raw `[section] key = value` text; keys are stored as "section.key".
struct ConfigText {
  std::map<std::string, std::string> values;
  std::vector<std::string> order;

  static ConfigText parse(const std::string& text, const std::string& origin = "config") {
    ConfigText out;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw UsageError(origin + ":" + std::to_string(lineno) + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
      }
      const std::string key = (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
      if (out.values.count(key)) throw UsageError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      out.values[key] = trim(line.substr(eq + 1));
      out.order.push_back(key);
    }
    return out;
  }

  static ConfigText load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!values.count(key)) order.push_back(key);
    values[key] = value;
  }

  /// Canonical rendering (sorted keys) used for the config hash.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values) out += k + "=" + v + "\n";
    return out;
  }
};

struct DataConfig {
  bool synthetic = true;
  std::string dir;
  SyntheticConfig synth;
  std::vector<VariableSpec> covariates;
};

struct MetricConfig {
  double edge_threshold = kEdgeThreshold;
  double variability_threshold = 0.10;
  double cell_area = kCellAreaKm2;
};

struct ExplainConfig {
  std::size_t seeds = 10;
  std::uint64_t master_seed = 1;
  std::vector<std::string> variables;  // empty: every (variable, lag) channel
  std::string detrend;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model = ModelConfig::mini(kSicLags, 6);
  TrainConfig train;
  std::string split_mode = "fixed";
  int target_year = 0;
  Splits splits = fixed_splits();
  MetricConfig metrics;
  ExplainConfig explain;
  std::string forecast_mode = "direct";
  std::size_t horizon = 0;  // autoregressive steps; 0 = model lead count
  std::string output_dir = "out";
  std::string forecasts_index;  // evaluate: forecast index CSV, default <out>/forecasts.csv
  std::vector<int> benchmark_years;
  ConfigText text;

  std::string forecast_index_path() const {
    return forecasts_index.empty() ? output_dir + "/forecasts.csv" : forecasts_index;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    N out;
    if constexpr (std::is_floating_point_v<N>) out = static_cast<N>(std::stod(v, &pos));
    else if constexpr (std::is_signed_v<N>) out = static_cast<N>(std::stoll(v, &pos));
    else {
      if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
      out = static_cast<N>(std::stoull(v, &pos));
    }
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' has invalid value '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key '" + key + "' expects true/false, got '" + v + "'");
}

inline YearRange parse_years(const std::string& key, const std::string& v) {
  const auto dash = v.find('-');
  if (dash == std::string::npos) throw UsageError("config key '" + key + "' expects YYYY-YYYY, got '" + v + "'");
  return {parse_number<int>(key, v.substr(0, dash)), parse_number<int>(key, v.substr(dash + 1))};
}

}  // namespace detail

/// Builds a validated RunConfig. Unknown keys are usage errors.
inline RunConfig resolve_config(const ConfigText& text) {
  using detail::parse_number;
  RunConfig cfg;
  cfg.text = text;
  std::string preset = "mini";
  std::vector<std::string> covariate_ids = {"sst", "gp250", "u10"};
  std::size_t lags = 3;
  std::optional<std::vector<std::string>> anomaly_ids, raw_ids;
  std::optional<YearRange> train, valid, test;
  std::map<std::string, std::string> model_keys;

  for (const auto& key : text.order) {
    const std::string& v = text.values.at(key);
    if (key == "data.synthetic") cfg.data.synthetic = detail::parse_bool(key, v);
    else if (key == "data.dir") cfg.data.dir = v;
    else if (key == "data.height") cfg.data.synth.height = parse_number<std::size_t>(key, v);
    else if (key == "data.width") cfg.data.synth.width = parse_number<std::size_t>(key, v);
    else if (key == "data.years") cfg.data.synth.years = parse_number<std::size_t>(key, v);
    else if (key == "data.first_year") cfg.data.synth.first_year = parse_number<int>(key, v);
    else if (key == "data.seed") cfg.data.synth.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "data.covariates") covariate_ids = detail::split_list(v);
    else if (key == "data.lags") lags = parse_number<std::size_t>(key, v);
    else if (key == "data.anomaly") anomaly_ids = detail::split_list(v);
    else if (key == "data.raw") raw_ids = detail::split_list(v);
    else if (key == "model.preset") preset = v;
    else if (key.starts_with("model.")) model_keys[key.substr(6)] = v;
    else if (key == "train.lr") cfg.train.initial_lr = parse_number<double>(key, v);
    else if (key == "train.decay") cfg.train.decay = parse_number<double>(key, v);
    else if (key == "train.decay_every") cfg.train.decay_every = parse_number<std::size_t>(key, v);
    else if (key == "train.patience") cfg.train.patience = parse_number<std::size_t>(key, v);
    else if (key == "train.max_epochs") cfg.train.max_epochs = parse_number<std::size_t>(key, v);
    else if (key == "train.seed") cfg.train.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "train.min_improvement") cfg.train.min_improvement = parse_number<double>(key, v);
    else if (key == "split.mode") cfg.split_mode = v;
    else if (key == "split.target_year") cfg.target_year = parse_number<int>(key, v);
    else if (key == "split.train") train = detail::parse_years(key, v);
    else if (key == "split.valid") valid = detail::parse_years(key, v);
    else if (key == "split.test") test = detail::parse_years(key, v);
    else if (key == "metrics.edge_threshold") cfg.metrics.edge_threshold = parse_number<double>(key, v);
    else if (key == "metrics.variability_threshold") cfg.metrics.variability_threshold = parse_number<double>(key, v);
    else if (key == "metrics.cell_area") cfg.metrics.cell_area = parse_number<double>(key, v);
    else if (key == "explain.seeds") cfg.explain.seeds = parse_number<std::size_t>(key, v);
    else if (key == "explain.master_seed") cfg.explain.master_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "explain.variables") cfg.explain.variables = detail::split_list(v);
    else if (key == "explain.detrend") cfg.explain.detrend = v;
    else if (key == "forecast.mode") cfg.forecast_mode = v;
    else if (key == "forecast.horizon") cfg.horizon = parse_number<std::size_t>(key, v);
    else if (key == "evaluate.forecasts") cfg.forecasts_index = v;
    else if (key == "output.dir") cfg.output_dir = v;
    else if (key == "benchmark.years") {
      const auto r = detail::parse_years(key, v);
      if (r.first > r.last) throw UsageError("config key 'benchmark.years' must be ascending, got '" + v + "'");
      cfg.benchmark_years.clear();
      for (int y = r.first; y <= r.last; ++y) cfg.benchmark_years.push_back(y);
    }
    else throw UsageError("unknown config key '" + key + "'");
  }

  for (const auto& id : covariate_ids) {
    auto spec = make_variable(id, lags);
    if (anomaly_ids) spec.anomaly = std::find(anomaly_ids->begin(), anomaly_ids->end(), id) != anomaly_ids->end();
    if (raw_ids) spec.normalize = std::find(raw_ids->begin(), raw_ids->end(), id) == raw_ids->end();
    if (id != kSic) cfg.data.covariates.push_back(spec);
  }
  const std::size_t channels = sample_layout(cfg.data.covariates).size();
  if (preset == "mini") cfg.model = ModelConfig::mini(channels, 6);
  else if (preset == "full") cfg.model = ModelConfig::full(channels, 6);
  else throw UsageError("config key 'model.preset' must be mini or full, got '" + preset + "'");
  for (const auto& [k, v] : model_keys) {
    if (!apply_model_key(cfg.model, k, v)) throw UsageError("unknown config key 'model." + k + "'");
  }
  if (cfg.model.input_channels != channels) {
    throw UsageError("model.input_channels = " + std::to_string(cfg.model.input_channels) +
                     " disagrees with the " + std::to_string(channels) + "-channel sample layout");
  }
  try {
    cfg.model.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  cfg.train.validate();

  if (cfg.split_mode == "fixed") cfg.splits = fixed_splits();
  else if (cfg.split_mode == "rolling") cfg.splits = rolling_splits(cfg.target_year);
  else if (cfg.split_mode == "custom") {
    if (!train || !valid || !test) throw UsageError("custom split needs split.train, split.valid and split.test");
    cfg.splits = custom_splits(*train, *valid, *test);
  } else {
    throw UsageError("config key 'split.mode' must be fixed, rolling or custom, got '" + cfg.split_mode + "'");
  }
  if (cfg.forecast_mode != "direct" && cfg.forecast_mode != "autoregressive") {
    throw UsageError("forecast mode must be direct or autoregressive, got '" + cfg.forecast_mode + "'");
  }
  if (!cfg.data.synthetic) {
    if (cfg.data.dir.empty()) throw UsageError("data.dir is required when data.synthetic = false");
    if (!std::filesystem::is_directory(cfg.data.dir)) {
      throw UsageError("data.dir '" + cfg.data.dir + "' does not exist");
    }
  }
  if (!cfg.forecasts_index.empty() && !std::filesystem::exists(cfg.forecasts_index)) {
    throw UsageError("evaluate.forecasts '" + cfg.forecasts_index + "' does not exist");
  }
  if (cfg.split_mode == "rolling") cfg.benchmark_years = {cfg.target_year};
  if (cfg.explain.seeds == 0) throw UsageError("explain.seeds must be positive");
  return cfg;
}

}  // namespace icemamba
