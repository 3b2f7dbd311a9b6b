#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "icemamba/binary_io.hpp"
#include "icemamba/model.hpp"
#include "icemamba/sample.hpp"

namespace icemamba {

struct TrainConfig {
  double initial_lr = 0.001;
  double decay = 0.5;
  std::size_t decay_every = 10;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 1;
  double min_improvement = 1e-6;

  void validate() const {
    if (!(initial_lr > 0.0)) throw UsageError("train: learning rate must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw UsageError("train: decay factor must lie in (0,1]");
    if (decay_every == 0) throw UsageError("train: decay interval must be positive");
    if (patience == 0) throw UsageError("train: patience must be at least 1");
    if (max_epochs == 0) throw UsageError("train: max_epochs must be at least 1");
  }
};

/// initial_lr * decay^floor(epoch / decay_every), epochs counted from 0.
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg = {}) {
  return cfg.initial_lr * std::pow(cfg.decay, static_cast<double>(epoch / cfg.decay_every));
}

/// Tracks the best validation loss; stops once more than `patience`
/// consecutive epochs fail to improve on it by `min_improvement`.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_improvement) : patience_(patience), min_delta_(min_improvement) {}

  /// Returns true when `loss` is a new best.
  bool update(std::size_t epoch, double loss) {
    if (loss < best_ - min_delta_) {
      best_ = loss;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ > patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

/// Fisher-Yates with an explicit engine so the order is the same on every
/// standard library.
template <class V>
void seeded_shuffle(std::vector<V>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Everything the loop reads. Every month an input or target touches is
/// appended to `audit` when set.
struct TrainingData {
  const SeriesSet* inputs = nullptr;  // model-ready (anomaly / normalized) series
  const GridSeries* sic = nullptr;    // observed SIC targets
  std::vector<VariableSpec> specs;
  Mask ocean;
  std::vector<Month> train_inits;
  std::vector<Month> valid_inits;
  std::vector<Month>* audit = nullptr;

  InputStack input(Month init) const {
    if (audit) {
      for (const auto& key : sample_layout(specs)) audit->push_back(init.plus(-static_cast<long>(key.lag)));
    }
    return assemble_sample(init, specs, *inputs);
  }
  std::vector<float> target(Month init, std::size_t leads) const {
    if (audit) for (std::size_t l = 0; l < leads; ++l) audit->push_back(init.plus(static_cast<long>(l)));
    return target_maps(*sic, init, leads);
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_valid = 0.0;
};

template <class T>
Tensor<T> to_tensor(const InputStack& s) {
  return Tensor<T>::from({s.channels, s.height, s.width}, std::vector<T>(s.values.begin(), s.values.end()));
}

/// Masked MAE of the raw head output over a list of initialisations.
template <class T>
double evaluate_loss(const IceMamba<T>& model, const TrainingData& data, const std::vector<Month>& inits) {
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& init : inits) {
    const auto target = data.target(init, model.config().lead_count);
    const std::vector<T> t(target.begin(), target.end());
    total += static_cast<double>(masked_mae(model.forward(to_tensor<T>(data.input(init))), std::span<const T>(t),
                                            std::span<const std::uint8_t>(data.ocean))
                                     .item());
  }
  return total / static_cast<double>(inits.size());
}

/// Batch-size-1 Adam on masked MAE with a seeded shuffle per epoch, step
/// learning-rate decay and early stopping; the model ends holding the
/// best-validation parameters.
template <class T>
TrainResult train_loop(IceMamba<T>& model, const TrainingData& data, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& progress = {}) {
  cfg.validate();
  if (data.train_inits.empty()) throw UsageError("train: no training samples in the split");
  if (data.valid_inits.empty()) throw UsageError("train: no validation samples in the split");
  const auto layout = sample_layout(data.specs);
  if (layout.size() != model.config().input_channels) {
    throw ShapeError("train: sample layout has " + std::to_string(layout.size()) + " channels, model expects " +
                     std::to_string(model.config().input_channels));
  }
  const std::size_t leads = model.config().lead_count;
  std::mt19937_64 rng(cfg.seed);
  EarlyStopping stopper(cfg.patience, cfg.min_improvement);
  TrainResult result;
  auto best = model.params().snapshot();
  auto order = data.train_inits;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    seeded_shuffle(order, rng);
    double total = 0.0;
    for (const auto& init : order) {
      const auto target = data.target(init, leads);
      const std::vector<T> t(target.begin(), target.end());
      auto loss = masked_mae(model.forward(to_tensor<T>(data.input(init))), std::span<const T>(t),
                             std::span<const std::uint8_t>(data.ocean));
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                           init.str());
      }
      total += value;
      backward(loss);
      adam_update(model.params(), lr);
    }
    EpochRecord rec{epoch + 1, lr, total / static_cast<double>(order.size()),
                    evaluate_loss(model, data, data.valid_inits)};
    result.history.push_back(rec);
    if (stopper.update(epoch + 1, rec.valid_loss)) best = model.params().snapshot();
    if (progress) progress(rec);
    if (stopper.should_stop()) break;
  }
  model.params().restore(best);
  result.best_epoch = stopper.best_epoch();
  result.best_valid = stopper.best();
  return result;
}

inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "epoch,lr,train_loss,valid_loss\n";
    char buf[128];
    for (const auto& r : history) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.lr, r.train_loss, r.valid_loss);
      os << buf;
    }
  });
}

}  // namespace icemamba
