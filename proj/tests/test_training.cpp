#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "icemamba/explain.hpp"
#include "icemamba/pipeline.hpp"
#include "icemamba/synthetic.hpp"
#include "icemamba/training.hpp"

using namespace icemamba;

namespace {

const Dataset& tiny_dataset() {
  static const Dataset d = [] {
    SyntheticConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.years = 15;
    cfg.seed = 3;
    return dataset_from(generate_synthetic(cfg));
  }();
  return d;
}

Splits tiny_splits() { return custom_splits({1979, 1988}, {1989, 1990}, {1991, 1993}); }

TrainConfig quick(std::uint64_t seed = 5) {
  TrainConfig t;
  t.max_epochs = 3;
  t.patience = 5;
  t.seed = seed;
  return t;
}

/// Forecasts every lead as channel `source` of the input.
struct ChannelModel {
  ModelConfig cfg;
  std::size_t source = 0;
  const ModelConfig& config() const { return cfg; }
  std::vector<float> predict(const InputStack& s) const {
    std::vector<float> out;
    for (std::size_t l = 0; l < cfg.lead_count; ++l) {
      const auto c = s.channel(source);
      out.insert(out.end(), c.begin(), c.end());
    }
    return out;
  }
};

EvalSet stub_set(std::size_t samples, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  EvalSet e;
  e.land = Mask(16, 0);
  e.land[0] = 1;
  e.ocean = invert(e.land);
  for (std::size_t s = 0; s < samples; ++s) {
    e.inits.push_back(Month{2000, 1}.plus(static_cast<long>(s)));
    InputStack x{channels, 4, 4, std::vector<float>(channels * 16)};
    for (auto& v : x.values) v = u(rng);
    std::fill(x.channel(channels - 1).begin(), x.channel(channels - 1).end(), 0.5f);
    std::vector<float> t(2 * 16);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t i = 0; i < 16; ++i) t[l * 16 + i] = std::clamp(x.channel(0)[i] + 0.05f * u(rng), 0.f, 1.f);
    e.inputs.push_back(std::move(x));
    e.targets.push_back(std::move(t));
  }
  return e;
}

ModelConfig stub_config(std::size_t channels) {
  auto cfg = ModelConfig::mini(channels, 2);
  return cfg;
}

}  // namespace

TEST(LrSchedule, StepDecay) {
  EXPECT_DOUBLE_EQ(lr_schedule(0), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(9), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(10), 5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(25), 2.5e-4);
}

TEST(EarlyStopping, StopsAfterPatienceExceeded) {
  EarlyStopping s(1, 1e-6);
  EXPECT_TRUE(s.update(1, 5.0));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(2, 6.0));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(3, 6.0));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 1u);
  EXPECT_EQ(s.best(), 5.0);
}

TEST(TrainConfig, RejectsInvalidValues) {
  auto t = quick();
  t.patience = 0;
  EXPECT_THROW(t.validate(), UsageError);
  t = quick();
  t.decay = 0;
  EXPECT_THROW(t.validate(), UsageError);
  t = quick();
  t.initial_lr = -1;
  EXPECT_THROW(t.validate(), UsageError);
}

TEST(SeededShuffle, IsAPermutationAndRepeatable) {
  std::vector<int> a(50), b;
  for (int i = 0; i < 50; ++i) a[i] = i;
  b = a;
  std::mt19937_64 r1(9), r2(9);
  seeded_shuffle(a, r1);
  seeded_shuffle(b, r2);
  EXPECT_EQ(a, b);
  std::sort(b.begin(), b.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(b[i], i);
}

TEST(MaskedLoss, LandDifferencesCostNothing) {
  const Mask ocean{1, 1, 0, 0};
  const std::vector<float> target{0.2f, 0.4f, 0.0f, 0.0f};
  const auto pred = Tensor<float>::from({1, 2, 2}, {0.2f, 0.4f, 0.9f, -0.7f});
  EXPECT_EQ(masked_mae(pred, std::span<const float>(target), std::span<const std::uint8_t>(ocean)).item(), 0.0f);
}

TEST(TrainLoop, SeededRunsAreBitIdentical) {
  const auto& d = tiny_dataset();
  const auto cfg = ModelConfig::mini(0, 2);
  auto a = train_model<float>(d, tiny_splits(), cfg, quick());
  auto b = train_model<float>(d, tiny_splits(), cfg, quick());
  ASSERT_EQ(a.result.history.size(), b.result.history.size());
  for (std::size_t i = 0; i < a.result.history.size(); ++i) {
    EXPECT_EQ(a.result.history[i].train_loss, b.result.history[i].train_loss);
    EXPECT_EQ(a.result.history[i].valid_loss, b.result.history[i].valid_loss);
  }
  EXPECT_EQ(a.model.params().snapshot(), b.model.params().snapshot());
  auto c = train_model<float>(d, tiny_splits(), cfg, quick(6));
  EXPECT_NE(a.result.history.front().train_loss, c.result.history.front().train_loss);
}

TEST(TrainLoop, RestoresBestCheckpointAndNeverTouchesTestYears) {
  const auto& d = tiny_dataset();
  const auto splits = tiny_splits();
  auto cfg = ModelConfig::mini(sample_layout(d.covariates).size(), 2);
  auto model = IceMamba<float>::build(cfg, 5);
  const auto prepared = prepare_for(d, splits);
  auto data = training_data(d, prepared, splits, cfg.lead_count);
  std::vector<Month> audit;
  data.audit = &audit;
  auto t = quick();
  t.max_epochs = 4;
  t.initial_lr = 5e-3;
  const auto r = train_loop(model, data, t);
  ASSERT_FALSE(audit.empty());
  for (const auto& m : audit) EXPECT_LT(m, splits.test.begin()) << m.str();
  const auto best = std::min_element(r.history.begin(), r.history.end(),
                                     [](const auto& x, const auto& y) { return x.valid_loss < y.valid_loss; });
  EXPECT_EQ(r.best_epoch, best->epoch);
  data.audit = nullptr;
  EXPECT_NEAR(evaluate_loss(model, data, data.valid_inits), r.best_valid, 1e-9);
}

TEST(TrainLoop, RejectsEmptySplitsAndChannelMismatch) {
  const auto& d = tiny_dataset();
  const auto splits = tiny_splits();
  const auto prepared = prepare_for(d, splits);
  auto data = training_data(d, prepared, splits, 2);
  auto model = IceMamba<float>::build(ModelConfig::mini(3, 2), 1);
  EXPECT_THROW(train_loop(model, data, quick()), ShapeError);
  data.valid_inits.clear();
  EXPECT_THROW(train_loop(model, data, quick()), UsageError);
}

TEST(History, CsvHasOneRowPerEpoch) {
  const auto path = (std::filesystem::temp_directory_path() / "icemamba_history.csv").string();
  write_history_csv(path, {{1, 1e-3, 0.5, 0.4}, {2, 1e-3, 0.25, 0.3}});
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "epoch,lr,train_loss,valid_loss");
  EXPECT_EQ(lines[2], "2,0.001,0.25,0.29999999999999999");
  std::filesystem::remove(path);
}

TEST(Importance, ConstantChannelHasZeroDelta) {
  const auto set = stub_set(12, 3, 1);
  const ChannelModel m{stub_config(3), 2};
  const auto rows = permute_importance(m, set, {"const", 1}, {2}, permutation_seeds(7));
  for (const auto& r : rows) EXPECT_EQ(r.delta_mae, 0.0);
}

TEST(Importance, UnreadChannelsHaveZeroDeltaAndReadChannelHurts) {
  const auto set = stub_set(12, 3, 2);
  const ChannelModel m{stub_config(3), 0};
  const std::vector<ChannelKey> layout{{"a", 1}, {"b", 1}, {"c", 1}};
  const auto t = channel_importance(m, set, layout, permutation_seeds(7));
  EXPECT_GT(t.mean_delta({"a", 1}), 5.0);
  EXPECT_EQ(t.mean_delta({"b", 1}), 0.0);
  EXPECT_EQ(t.mean_delta({"c", 1}), 0.0);
}

TEST(Importance, DeterministicAndBaselineMatchesEvaluation) {
  const auto set = stub_set(12, 3, 3);
  const ChannelModel m{stub_config(3), 0};
  const std::vector<ChannelKey> layout{{"a", 1}, {"a", 2}, {"b", 1}};
  const auto seeds = permutation_seeds(11);
  const auto x = variable_importance(m, set, layout, {"a", "b"}, seeds);
  const auto y = variable_importance(m, set, layout, {"a", "b"}, seeds);
  ASSERT_EQ(x.entries.size(), y.entries.size());
  for (std::size_t i = 0; i < x.entries.size(); ++i) {
    EXPECT_EQ(x.entries[i].delta_mae, y.entries[i].delta_mae);
    EXPECT_EQ(x.entries[i].seed_std, y.entries[i].seed_std);
  }
  const auto errs = forecast_errors(m, set, set.inputs);
  for (const auto& e : x.entries) {
    if (e.axis != "lead") continue;
    double mean = 0;
    for (const auto& row : errs) mean += row[e.axis_value - 1] / static_cast<double>(errs.size());
    EXPECT_NEAR(e.baseline_mae, mean, 1e-12);
  }
  EXPECT_EQ(std::count_if(x.entries.begin(), x.entries.end(), [](const auto& e) { return e.axis == "lead"; }), 4);
  EXPECT_EQ(key_label({"a", 0}), "a (all)");
  EXPECT_EQ(key_label({"sst", 2}), "sst (2)");
  EXPECT_THROW(variable_importance(m, set, layout, {"zz"}, seeds), UsageError);
  EXPECT_EQ(permutation_seeds(11), seeds);
  EXPECT_EQ(seeds.size(), 10u);
}

TEST(Importance, TargetMonthAxisCoversEvaluatedMonths) {
  const auto set = stub_set(12, 2, 4);
  const ChannelModel m{stub_config(2), 0};
  const auto rows = permute_importance(m, set, {"a", 1}, {0}, permutation_seeds(1, 3));
  std::vector<std::size_t> months;
  for (const auto& r : rows) if (r.axis == "target_month") months.push_back(r.axis_value);
  EXPECT_EQ(months.size(), 12u);
}
