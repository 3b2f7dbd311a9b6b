#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "icemamba/metrics.hpp"
#include "icemamba/model.hpp"
#include "icemamba/parallel.hpp"
#include "icemamba/sample.hpp"
#include "icemamba/training.hpp"

namespace icemamba {

/// Held-out samples with observed targets, as the harness sees them.
struct EvalSet {
  std::vector<Month> inits;
  std::vector<InputStack> inputs;
  std::vector<std::vector<float>> targets;  // [k,H,W] per init
  Mask land;
  Mask ocean;
};

inline EvalSet make_eval_set(const TrainingData& data, const std::vector<Month>& inits, std::size_t leads,
                             const Mask& land) {
  EvalSet e;
  e.inits = inits;
  e.land = land;
  e.ocean = invert(land);
  for (const auto& m : inits) {
    e.inputs.push_back(data.input(m));
    e.targets.push_back(data.target(m, leads));
  }
  return e;
}

/// Masked MAE (percent) of each (sample, lead) forecast, laid out [sample][lead-1].
template <Forecaster M>
std::vector<std::vector<double>> forecast_errors(const M& model, const EvalSet& set,
                                                 const std::vector<InputStack>& inputs) {
  const std::size_t leads = model.config().lead_count;
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const auto f = forecast_direct(model, inputs[s], set.land, set.inits[s]);
    const std::size_t hw = f.height * f.width;
    std::vector<double> row;
    for (std::size_t l = 1; l <= leads; ++l) {
      row.push_back(masked_error(f.map(l), std::span<const float>(set.targets[s]).subspan((l - 1) * hw, hw),
                                 set.ocean, ErrorKind::mae));
    }
    out.push_back(std::move(row));
  }
  return out;
}

struct ImportanceEntry {
  ChannelKey key;           // lag 0 = every lag of the variable permuted together
  std::string axis;         // "lead" or "target_month"
  std::size_t axis_value = 0;
  double baseline_mae = 0.0;
  double delta_mae = 0.0;   // mean over seeds
  double seed_std = 0.0;    // population std over seeds
};

struct ImportanceTable {
  std::vector<std::uint64_t> seeds;
  std::vector<ImportanceEntry> entries;

  /// Mean ΔMAE of a key over the lead axis.
  double mean_delta(const ChannelKey& key) const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& e : entries) {
      if (e.key == key && e.axis == "lead") {
        s += e.delta_mae;
        ++n;
      }
    }
    if (!n) throw UsageError("importance table has no entries for '" + key.label() + "'");
    return s / static_cast<double>(n);
  }
};

inline std::vector<std::uint64_t> permutation_seeds(std::uint64_t master, std::size_t count = 10) {
  std::mt19937_64 rng(master);
  std::vector<std::uint64_t> out(count);
  for (auto& s : out) s = rng();
  return out;
}

/// Permute-and-predict: for each seed the listed channels are replaced, as
/// whole 2D fields, by those of a permuted assignment of the evaluation
/// initialisations; ΔMAE = permuted MAE - baseline MAE, disaggregated by
/// lead and by target month.
template <Forecaster M>
std::vector<ImportanceEntry> permute_importance(const M& model, const EvalSet& set, const ChannelKey& key,
                                                const std::vector<std::size_t>& channels,
                                                const std::vector<std::uint64_t>& seeds) {
  if (set.inputs.empty()) throw UsageError("permute_importance: no evaluation samples");
  if (seeds.empty()) throw UsageError("permute_importance: no seeds");
  const std::size_t leads = model.config().lead_count;
  for (auto c : channels) {
    if (c >= set.inputs.front().channels) throw UsageError("permute_importance: channel index out of range");
  }
  const auto base = forecast_errors(model, set, set.inputs);

  // Per seed: mean ΔMAE per lead and per target month.
  std::vector<std::vector<double>> by_lead(seeds.size(), std::vector<double>(leads, 0.0));
  std::vector<std::vector<double>> by_month(seeds.size(), std::vector<double>(12, 0.0));
  std::vector<std::size_t> month_count(12, 0);
  std::vector<double> base_lead(leads, 0.0), base_month(12, 0.0);
  for (std::size_t s = 0; s < set.inits.size(); ++s) {
    for (std::size_t l = 1; l <= leads; ++l) {
      const int m = set.inits[s].plus(static_cast<long>(l) - 1).month;
      ++month_count[m - 1];
      base_lead[l - 1] += base[s][l - 1];
      base_month[m - 1] += base[s][l - 1];
    }
  }
  std::vector<std::vector<std::vector<double>>> errs(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t k) {
    std::vector<std::size_t> perm(set.inputs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::mt19937_64 rng(seeds[k]);
    seeded_shuffle(perm, rng);
    auto permuted = set.inputs;
    for (std::size_t s = 0; s < permuted.size(); ++s) {
      for (auto c : channels) {
        const auto src = set.inputs[perm[s]].channel(c);
        std::copy(src.begin(), src.end(), permuted[s].channel(c).begin());
      }
    }
    errs[k] = forecast_errors(model, set, permuted);
  });
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    for (std::size_t s = 0; s < set.inits.size(); ++s) {
      for (std::size_t l = 1; l <= leads; ++l) {
        const double d = errs[k][s][l - 1] - base[s][l - 1];
        by_lead[k][l - 1] += d;
        by_month[k][set.inits[s].plus(static_cast<long>(l) - 1).month - 1] += d;
      }
    }
  }
  std::vector<ImportanceEntry> out;
  auto summarize = [&](const std::vector<std::vector<double>>& per_seed, std::size_t idx, double count) {
    double mean = 0, sq = 0;
    for (const auto& row : per_seed) mean += row[idx] / count;
    mean /= static_cast<double>(per_seed.size());
    for (const auto& row : per_seed) sq += (row[idx] / count - mean) * (row[idx] / count - mean);
    return std::pair{mean, std::sqrt(sq / static_cast<double>(per_seed.size()))};
  };
  const double n = static_cast<double>(set.inits.size());
  for (std::size_t l = 0; l < leads; ++l) {
    const auto [mean, sd] = summarize(by_lead, l, n);
    out.push_back({key, "lead", l + 1, base_lead[l] / n, mean, sd});
  }
  for (std::size_t m = 0; m < 12; ++m) {
    if (!month_count[m]) continue;
    const double c = static_cast<double>(month_count[m]);
    const auto [mean, sd] = summarize(by_month, m, c);
    out.push_back({key, "target_month", m + 1, base_month[m] / c, mean, sd});
  }
  return out;
}

/// Importance for every (variable, lag) channel of `layout`.
template <Forecaster M>
ImportanceTable channel_importance(const M& model, const EvalSet& set, const std::vector<ChannelKey>& layout,
                                   const std::vector<std::uint64_t>& seeds) {
  ImportanceTable t{seeds, {}};
  for (std::size_t c = 0; c < layout.size(); ++c) {
    auto rows = permute_importance(model, set, layout[c], {c}, seeds);
    t.entries.insert(t.entries.end(), rows.begin(), rows.end());
  }
  return t;
}

/// Importance of whole variables (all lags permuted with one shared permutation).
template <Forecaster M>
ImportanceTable variable_importance(const M& model, const EvalSet& set, const std::vector<ChannelKey>& layout,
                                    const std::vector<std::string>& variables,
                                    const std::vector<std::uint64_t>& seeds) {
  ImportanceTable t{seeds, {}};
  for (const auto& v : variables) {
    std::vector<std::size_t> channels;
    for (std::size_t c = 0; c < layout.size(); ++c) if (layout[c].variable == v) channels.push_back(c);
    if (channels.empty()) throw UsageError("variable '" + v + "' is not in the sample layout");
    auto rows = permute_importance(model, set, ChannelKey{v, 0}, channels, seeds);
    t.entries.insert(t.entries.end(), rows.begin(), rows.end());
  }
  return t;
}

inline std::string key_label(const ChannelKey& k) {
  return k.lag == 0 ? k.variable + " (all)" : k.label();
}

/// One block of rows per (experiment id, table) pair.
inline void write_importance_csv(const std::string& path,
                                 const std::vector<std::pair<std::string, ImportanceTable>>& experiments) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "experiment,variable,lag,axis,axis_value,baseline_mae_percent,delta_mae_percent,seed_std\n";
    for (const auto& [experiment, t] : experiments) {
      for (const auto& e : t.entries) {
        os << experiment << ',' << e.key.variable << ',' << (e.key.lag ? std::to_string(e.key.lag) : "all") << ','
           << e.axis << ',' << e.axis_value << ',' << format_value(e.baseline_mae) << ','
           << format_value(e.delta_mae) << ',' << format_value(e.seed_std) << '\n';
      }
    }
  });
}

/// Rows: (variable, lag) labels in first-seen order; columns: 1..width of
/// `axis`. Missing cells are absent.
struct ImportanceGrid {
  std::vector<std::string> rows;
  std::vector<std::vector<std::optional<double>>> cells;
};

inline ImportanceGrid importance_grid(const ImportanceTable& t, const std::string& axis, std::size_t width) {
  ImportanceGrid g;
  std::map<std::string, std::size_t> row_of;
  for (const auto& e : t.entries) {
    const auto label = key_label(e.key);
    if (!row_of.count(label)) {
      row_of[label] = g.rows.size();
      g.rows.push_back(label);
      g.cells.emplace_back(width);
    }
    if (e.axis == axis && e.axis_value >= 1 && e.axis_value <= width) {
      g.cells[row_of[label]][e.axis_value - 1] = e.delta_mae;
    }
  }
  return g;
}

inline void write_importance_grid_csv(const std::string& path, const ImportanceGrid& g, const std::string& axis) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "channel";
    for (std::size_t c = 1; c <= (g.cells.empty() ? 0 : g.cells.front().size()); ++c) os << ',' << axis << '_' << c;
    os << '\n';
    for (std::size_t r = 0; r < g.rows.size(); ++r) {
      os << '"' << g.rows[r] << '"';
      for (const auto& v : g.cells[r]) os << ',' << format_value(v);
      os << '\n';
    }
  });
}

}  // namespace icemamba
