#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "icemamba/digest.hpp"
#include "icemamba/pipeline.hpp"

#ifndef ICEMAMBA_VERSION
#define ICEMAMBA_VERSION "unknown"
#endif

namespace icemamba {

inline constexpr const char* kVersion = ICEMAMBA_VERSION;

/// Everything a command read and wrote, for the run manifest.
struct RunRecord {
  std::string command;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
};

namespace app {

namespace fs = std::filesystem;

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

inline std::string config_hash(const RunConfig& cfg) { return sha256_hex(cfg.text.canonical()); }

/// manifest_<command>.json: version, config hash, seeds and SHA-256 of every
/// input and output file. Contains nothing that varies between reruns.
inline std::string write_manifest(const RunConfig& cfg, RunRecord& rec) {
  nlohmann::ordered_json j;
  j["command"] = rec.command;
  j["version"] = kVersion;
  j["config_hash"] = config_hash(cfg);
  j["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : cfg.text.values) j["config"][k] = v;
  rec.seeds["train"] = cfg.train.seed;
  if (cfg.data.synthetic) rec.seeds["data"] = cfg.data.synth.seed;
  j["seeds"] = rec.seeds;
  auto digests = [](const std::vector<std::string>& paths) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : paths) arr.push_back({{"path", p}, {"sha256", file_sha256(p)}});
    return arr;
  };
  j["inputs"] = digests(rec.inputs);
  j["outputs"] = digests(rec.outputs);
  const auto path = out_path(cfg, "manifest_" + rec.command + ".json");
  io::write_atomically(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  return path;
}

inline Dataset load_inputs(const RunConfig& cfg, RunRecord& rec) {
  auto d = make_dataset(cfg);
  if (!cfg.data.synthetic) {
    rec.inputs.push_back(grid_path(cfg.data.dir, std::string(kSic)));
    for (const auto& s : d.covariates) rec.inputs.push_back(grid_path(cfg.data.dir, s.id));
  }
  return d;
}

inline std::map<std::string, std::string> stats_ids(const PreparedInputs& p) {
  std::map<std::string, std::string> out;
  for (const auto& s : p.stats) out["stats." + s.variable] = s.id();
  return out;
}

inline void save_trained(const RunConfig& cfg, const TrainedModel<float>& tm, RunRecord& rec,
                         const std::string& prefix = "model") {
  const auto ckpt = out_path(cfg, prefix + ".ckpt"), sidecar = out_path(cfg, prefix + ".cfg");
  save_checkpoint(ckpt, tm.model.params());
  auto extra = stats_ids(tm.prepared);
  extra["train.seed"] = std::to_string(cfg.train.seed);
  extra["best_epoch"] = std::to_string(tm.result.best_epoch);
  write_model_sidecar(sidecar, tm.model.config(), extra);
  rec.outputs.push_back(ckpt);
  rec.outputs.push_back(sidecar);
}

inline void print_epoch(const EpochRecord& r) {
  std::printf("epoch %zu lr=%.6g train_mae=%.6f valid_mae=%.6f\n", r.epoch, r.lr, r.train_loss, r.valid_loss);
  std::fflush(stdout);
}

inline TrainedModel<float> train_and_save(const RunConfig& cfg, const Dataset& d, const Splits& splits,
                                          RunRecord& rec, const std::string& prefix = "model") {
  auto tm = train_model<float>(d, splits, cfg.model, cfg.train, print_epoch);
  save_trained(cfg, tm, rec, prefix);
  const auto history = out_path(cfg, prefix == "model" ? "history.csv" : prefix + "_history.csv");
  write_history_csv(history, tm.result.history);
  rec.outputs.push_back(history);
  return tm;
}

/// The model written by `train` in the output directory, checked against the
/// current configuration and preprocessing statistics.
inline TrainedModel<float> load_trained(const RunConfig& cfg, const Dataset& d, RunRecord& rec) {
  const auto ckpt = out_path(cfg, "model.ckpt"), sidecar = out_path(cfg, "model.cfg");
  if (!fs::exists(ckpt) || !fs::exists(sidecar)) {
    throw DataError("no trained model in '" + cfg.output_dir + "'; run the train command first");
  }
  std::map<std::string, std::string> extra;
  const auto mc = read_model_sidecar(sidecar, &extra);
  if (to_record(mc) != to_record(cfg.model)) {
    throw DataError("model in '" + cfg.output_dir + "' was trained with a different model configuration");
  }
  TrainedModel<float> tm{IceMamba<float>::build(mc, 0), {}, prepare_for(d, cfg.splits)};
  load_checkpoint(ckpt, tm.model.params());
  for (const auto& [k, v] : stats_ids(tm.prepared)) {
    const auto it = extra.find(k);
    if (it == extra.end() || it->second != v) {
      throw DataError("normalization statistics for '" + k.substr(6) + "' differ from those the model was trained with");
    }
  }
  rec.inputs.push_back(ckpt);
  rec.inputs.push_back(sidecar);
  return tm;
}

inline TrainedModel<float> load_or_train(const RunConfig& cfg, const Dataset& d, RunRecord& rec) {
  if (fs::exists(out_path(cfg, "model.ckpt"))) return load_trained(cfg, d, rec);
  return train_and_save(cfg, d, cfg.splits, rec);
}

inline const std::vector<std::string>& scored_metrics() {
  static const std::vector<std::string> m{"mae", "rmse", "iiee", "oe", "ue", "acc"};
  return m;
}

inline void write_scores(const RunConfig& cfg, const MetricTable& table, std::size_t leads, const std::string& prefix,
                         RunRecord& rec) {
  const auto metrics = out_path(cfg, prefix + "metrics.csv");
  const auto heatmap = out_path(cfg, prefix + "heatmap.csv");
  const auto seasonal = out_path(cfg, prefix + "seasonal.csv");
  write_metrics_csv(metrics, table);
  write_heatmap_csv(heatmap, table, scored_metrics(), leads);
  write_seasonal_csv(seasonal, table, scored_metrics());
  rec.outputs.insert(rec.outputs.end(), {metrics, heatmap, seasonal});
}

inline void print_means(const std::string& label, const MetricTable& table) {
  std::printf("%s", label.c_str());
  for (const auto& m : scored_metrics()) std::printf(" %s=%s", m.c_str(), format_value(table.mean(m)).c_str());
  std::printf("\n");
}

// ---- commands -------------------------------------------------------------

inline void cmd_synth(const RunConfig& cfg, RunRecord& rec) {
  auto d = dataset_from(generate_synthetic(cfg.data.synth));
  const auto dir = out_path(cfg, "data");
  rec.outputs = save_dataset(dir, d);
  const auto prepared = prepare_inputs(d.raw, d.covariates, d.sic().months.front(), d.sic().months.back());
  const auto stats = (fs::path(dir) / "stats.json").string();
  write_stats_manifest(stats, prepared.stats);
  rec.outputs.push_back(stats);
  std::printf("wrote %zu variables (%zux%zu, %zu months) to %s\n", d.raw.size(), d.sic().height, d.sic().width,
              d.sic().steps(), dir.c_str());
}

inline void cmd_train(const RunConfig& cfg, RunRecord& rec) {
  const auto d = load_inputs(cfg, rec);
  require_coverage(d, cfg.splits);
  const auto tm = train_and_save(cfg, d, cfg.splits, rec);
  const auto stats = out_path(cfg, "stats.json");
  write_stats_manifest(stats, tm.prepared.stats);
  rec.outputs.push_back(stats);
  std::printf("best epoch %zu valid_mae=%.6f\n", tm.result.best_epoch, tm.result.best_valid);
}

inline void cmd_forecast(const RunConfig& cfg, RunRecord& rec) {
  const auto d = load_inputs(cfg, rec);
  require_coverage(d, cfg.splits);
  const auto tm = load_trained(cfg, d, rec);
  std::vector<ForecastSet> forecasts;
  if (cfg.forecast_mode == "direct") {
    const auto inits = evaluation_inits(cfg.splits, cfg.model.lead_count, max_lag(d.covariates));
    forecasts = forecast_inits(tm.model, d, tm.prepared, inits);
  } else {
    const std::size_t horizon = cfg.horizon ? cfg.horizon : cfg.model.lead_count;
    if (!d.covariates.empty()) {
      throw UsageError("autoregressive forecasting needs a SIC-only model; set data.covariates to empty");
    }
    for (const auto& init : evaluation_inits(cfg.splits, horizon, max_lag(d.covariates))) {
      forecasts.push_back(forecast_autoregressive(tm.model, assemble_sample(init, d.covariates, tm.prepared.series),
                                                  d.land, init, horizon));
    }
  }
  const auto written = write_forecasts(cfg.forecast_index_path(), out_path(cfg, "forecasts"), forecasts, d.land);
  rec.outputs.insert(rec.outputs.end(), written.begin(), written.end());
  std::printf("wrote %zu %s forecasts to %s\n", forecasts.size(), cfg.forecast_mode.c_str(),
              cfg.forecast_index_path().c_str());
}

inline void cmd_baseline(const RunConfig& cfg, RunRecord& rec) {
  const auto d = load_inputs(cfg, rec);
  require_coverage(d, cfg.splits);
  const std::size_t leads = cfg.model.lead_count;
  const auto inits = evaluation_inits(cfg.splits, leads, max_lag(d.covariates));
  for (auto kind : {BaselineKind::anomaly_persistence, BaselineKind::damped_persistence,
                    BaselineKind::trend_climatology}) {
    const std::string name = baseline_name(kind);
    std::vector<ForecastSet> forecasts;
    for (const auto& init : inits) forecasts.push_back(baseline_forecast(kind, d.sic(), init, leads));
    const auto written = write_forecasts(out_path(cfg, "baselines/" + name + ".csv"),
                                         out_path(cfg, "baselines/" + name), forecasts, d.land);
    rec.outputs.insert(rec.outputs.end(), written.begin(), written.end());
    const auto table = score_all(forecasts, d, cfg.splits, cfg.metrics);
    write_scores(cfg, table, leads, "baselines/" + name + "_", rec);
    print_means(name, table);
  }
}

inline void cmd_evaluate(const RunConfig& cfg, RunRecord& rec) {
  const auto d = load_inputs(cfg, rec);
  const auto index = cfg.forecast_index_path();
  rec.inputs.push_back(index);
  const auto forecasts = read_forecasts(index, &rec.inputs);
  std::size_t leads = 0;
  for (const auto& f : forecasts) {
    if (f.height != d.sic().height || f.width != d.sic().width) {
      throw DataError("forecast for " + f.init.str() + " does not match the observation grid");
    }
    leads = std::max(leads, f.leads);
  }
  const auto table = score_all(forecasts, d, cfg.splits, cfg.metrics);
  write_scores(cfg, table, leads, "", rec);
  print_means("forecast", table);
}

/// September scores for initialisations June..September of each target year,
/// with the model retrained on the rolling split for that year.
inline void cmd_benchmark(const RunConfig& cfg, RunRecord& rec) {
  const auto& years = cfg.benchmark_years;
  if (years.empty()) throw UsageError("benchmark needs --target-year or benchmark.years");
  if (cfg.model.lead_count < 4) throw UsageError("benchmark needs model.lead_count >= 4 (June to September)");
  const auto d = load_inputs(cfg, rec);
  const auto ocean = d.ocean();
  const auto splits_path = out_path(cfg, "benchmark_splits.csv");
  const auto scores_path = out_path(cfg, "benchmark.csv");
  std::ostringstream splits_csv, scores;
  splits_csv << "target_year,train,valid,test\n";
  scores << "target_year,method,init,lead,metric,unit,value\n";
  for (int y : years) {
    const auto splits = rolling_splits(y);
    splits_csv << y << ',' << splits.train.str() << ',' << splits.valid.str() << ',' << splits.test.str() << '\n';
    require_coverage(d, splits);
    const Month september{y, 9};
    const auto clim = fit_climatology(d.sic(), splits.train.begin(), splits.train.end());
    const auto variable = variability_mask(d.sic(), 9, cfg.metrics.variability_threshold, splits.train.begin(),
                                           Month{y - 1, 12});
    const bool any = std::any_of(variable.begin(), variable.end(), [](std::uint8_t v) { return v != 0; });
    if (!any) std::fprintf(stderr, "icemamba: note: empty variability mask for %d; RMSE and ACC are NA\n", y);
    const auto obs = d.sic().field_at(september);

    std::printf("target year %d: train %s valid %s\n", y, splits.train.str().c_str(), splits.valid.str().c_str());
    const auto tm = train_model<float>(d, splits, cfg.model, cfg.train, print_epoch);

    auto score = [&](const std::string& method, const ForecastSet& f, std::size_t lead) {
      const auto p = f.map(lead);
      std::optional<double> rmse, acc_value;
      if (any) {
        rmse = masked_error(p, obs, variable, ErrorKind::rmse);
        const auto c = clim.month(9);
        std::vector<double> pa(p.size()), oa(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          pa[i] = p[i] - c[i];
          oa[i] = obs[i] - c[i];
        }
        try {
          acc_value = acc(pa, oa, variable);
        } catch (const DataError&) {
        }
      }
      const auto e = iiee(p, obs, ocean, cfg.metrics.edge_threshold, cfg.metrics.cell_area);
      const std::pair<const char*, std::optional<double>> rows[] = {
          {"rmse", rmse}, {"acc", acc_value}, {"iiee", e.iiee}, {"oe", e.oe}, {"ue", e.ue}};
      for (const auto& [metric, value] : rows) {
        scores << y << ',' << method << ',' << f.init.str() << ',' << lead << ',' << metric << ','
               << metric_unit(metric) << ',' << format_value(value) << '\n';
      }
    };
    for (int m = 6; m <= 9; ++m) {
      const Month init{y, m};
      const std::size_t lead = static_cast<std::size_t>(10 - m);
      const auto f = forecast_direct(tm.model, assemble_sample(init, d.covariates, tm.prepared.series), d.land, init);
      score("icemamba", f, lead);
      score("anomaly_persistence", anomaly_persistence(d.sic(), init, lead), lead);
      score("damped_persistence", damped_persistence(d.sic(), init, lead), lead);
    }
  }
  io::write_atomically(splits_path, [&](std::ostream& os) { os << splits_csv.str(); });
  io::write_atomically(scores_path, [&](std::ostream& os) { os << scores.str(); });
  rec.outputs.insert(rec.outputs.end(), {splits_path, scores_path});
  std::printf("wrote %s\n", scores_path.c_str());
}

inline ImportanceTable importance_for(const RunConfig& cfg, const IceMamba<float>& model, const EvalSet& set,
                                      const std::vector<VariableSpec>& specs,
                                      const std::vector<std::uint64_t>& seeds) {
  const auto layout = sample_layout(specs);
  if (cfg.explain.variables.empty()) return channel_importance(model, set, layout, seeds);
  return variable_importance(model, set, layout, cfg.explain.variables, seeds);
}

inline void cmd_explain(const RunConfig& cfg, RunRecord& rec) {
  const auto d = load_inputs(cfg, rec);
  require_coverage(d, cfg.splits);
  const std::size_t leads = cfg.model.lead_count;
  const auto inits = evaluation_inits(cfg.splits, leads, max_lag(d.covariates));
  const auto seeds = permutation_seeds(cfg.explain.master_seed, cfg.explain.seeds);
  rec.seeds["explain_master"] = cfg.explain.master_seed;
  rec.seeds["permutation"] = seeds;

  std::vector<std::pair<std::string, ImportanceTable>> tables;
  std::ostringstream metrics;
  metrics << "experiment,metric,unit,value\n";
  auto run_experiment = [&](const std::string& id, const Dataset& data, const TrainedModel<float>& tm) {
    const auto set = eval_set_for(data, tm.prepared, inits, leads);
    tables.emplace_back(id, importance_for(cfg, tm.model, set, data.covariates, seeds));
    const auto table = score_all(forecast_inits(tm.model, data, tm.prepared, inits), data, cfg.splits, cfg.metrics);
    for (const auto& m : scored_metrics()) {
      metrics << id << ',' << m << ',' << metric_unit(m) << ',' << format_value(table.mean(m)) << '\n';
    }
    print_means(id, table);
  };

  run_experiment("raw", d, load_or_train(cfg, d, rec));
  if (!cfg.explain.detrend.empty()) {
    const auto dd = detrended(d, cfg.explain.detrend);
    std::printf("retraining with %s detrended\n", cfg.explain.detrend.c_str());
    run_experiment("detrended", dd, train_and_save(cfg, dd, cfg.splits, rec, "model_detrended"));
  }

  const auto importance = out_path(cfg, "importance.csv");
  write_importance_csv(importance, tables);
  rec.outputs.push_back(importance);
  for (const auto& [id, table] : tables) {
    const auto suffix = id == "raw" ? std::string() : "_" + id;
    const auto by_lead = out_path(cfg, "importance_lead" + suffix + ".csv");
    const auto by_month = out_path(cfg, "importance_month" + suffix + ".csv");
    write_importance_grid_csv(by_lead, importance_grid(table, "lead", leads), "lead");
    write_importance_grid_csv(by_month, importance_grid(table, "target_month", 12), "month");
    rec.outputs.insert(rec.outputs.end(), {by_lead, by_month});
  }
  const auto metrics_path = out_path(cfg, "explain_metrics.csv");
  io::write_atomically(metrics_path, [&](std::ostream& os) { os << metrics.str(); });
  rec.outputs.push_back(metrics_path);
}

inline std::string one_line(std::string s) {
  for (auto& c : s) if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace app

/// Command-line entry point. Exit status: 0 success, 1 usage, 2 data,
/// 3 numeric failure; failures print one `icemamba: error=<kind> ...` line.
inline int run(int argc, const char* const* argv) {
  CLI::App cli{"IceMamba seasonal sea-ice concentration forecasting"};
  cli.set_version_flag("--version", std::string(kVersion));
  cli.require_subcommand(1, 1);
  std::string config_path, mode, out, detrend;
  std::optional<std::uint64_t> seed;
  std::optional<int> target_year;
  std::optional<std::size_t> leads;
  cli.add_option("--config", config_path, "configuration file ([section] key = value)");
  cli.add_option("--seed", seed, "training seed (train.seed)");
  cli.add_option("--mode", mode, "forecast mode (forecast.mode)")->check(CLI::IsMember({"direct", "autoregressive"}));
  cli.add_option("--target-year", target_year, "rolling split target year (split.mode = rolling)");
  cli.add_option("--leads", leads, "number of lead months (model.lead_count)");
  cli.add_option("--out", out, "output directory (output.dir)");
  cli.add_option("--detrend", detrend, "variable to detrend and retrain (explain.detrend)");
  const std::pair<const char*, const char*> commands[] = {
      {"synth", "write a synthetic IMGR data set"},
      {"train", "train a model and write its checkpoint and history"},
      {"forecast", "write forecasts for the test initialisations"},
      {"baseline", "write and score the three reference forecasts"},
      {"evaluate", "score a forecast index against observations"},
      {"benchmark", "September scores with rolling retraining per target year"},
      {"explain", "permutation importance, optionally with a detrended retrain"}};
  for (const auto& [name, help] : commands) cli.add_subcommand(name, help)->fallthrough();

  std::string command = "?";
  try {
    try {
      cli.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return cli.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return cli.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return cli.exit(e);
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }
    command = cli.get_subcommands().front()->get_name();

    ConfigText text = config_path.empty() ? ConfigText{} : ConfigText::load(config_path);
    if (seed) text.set("train.seed", std::to_string(*seed));
    if (!mode.empty()) text.set("forecast.mode", mode);
    if (target_year) {
      text.set("split.mode", "rolling");
      text.set("split.target_year", std::to_string(*target_year));
    }
    if (leads) text.set("model.lead_count", std::to_string(*leads));
    if (!out.empty()) text.set("output.dir", out);
    if (!detrend.empty()) text.set("explain.detrend", detrend);
    const RunConfig cfg = resolve_config(text);
    std::filesystem::create_directories(cfg.output_dir);

    RunRecord rec;
    rec.command = command;
    if (!config_path.empty()) rec.inputs.push_back(config_path);
    if (command == "synth") app::cmd_synth(cfg, rec);
    else if (command == "train") app::cmd_train(cfg, rec);
    else if (command == "forecast") app::cmd_forecast(cfg, rec);
    else if (command == "baseline") app::cmd_baseline(cfg, rec);
    else if (command == "evaluate") app::cmd_evaluate(cfg, rec);
    else if (command == "benchmark") app::cmd_benchmark(cfg, rec);
    else if (command == "explain") app::cmd_explain(cfg, rec);
    app::write_manifest(cfg, rec);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "icemamba: error=usage command=" << command << " message=" << app::one_line(e.what()) << '\n';
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "icemamba: error=usage command=" << command << " message=" << app::one_line(e.what()) << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "icemamba: error=numeric command=" << command << " message=" << app::one_line(e.what()) << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "icemamba: error=data command=" << command << " message=" << app::one_line(e.what()) << '\n';
    return 2;
  }
}

}  // namespace icemamba
