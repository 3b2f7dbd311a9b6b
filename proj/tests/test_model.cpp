#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "fd_check.hpp"
#include "icemamba/checkpoint.hpp"
#include "icemamba/model.hpp"

namespace icemamba {
namespace {

using testing::random_tensor;

// Independent parameter count oracle.
std::size_t ssm_count(std::size_t c, std::size_t n) { return c * c + 2 * c + 3 * c * n + 2 * n; }
std::size_t vssb_count(std::size_t c, std::size_t ci, std::size_t n) {
  return 2 * c + 3 * c * ci + 9 * ci + 2 * ci + 4 * ssm_count(ci, n);
}
std::size_t ressb_count(std::size_t c, std::size_t ci, std::size_t n) {
  return eca_kernel_size(c) + 2 * vssb_count(c, ci, n) + c * c + c;
}
std::size_t model_count(const ModelConfig& cfg) {
  const std::size_t E = cfg.embed_channels, P = cfg.patch_size, S = cfg.stages();
  std::size_t total = cfg.input_channels * P * P * E + E;
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t C = E << s;
    const std::size_t blocks = s + 1 < S ? 2 * cfg.depths[s] : cfg.depths[s];
    total += blocks * ressb_count(C, C * cfg.inner_ratio, cfg.state_size);
    if (s + 1 < S) total += 2 * 8 * C * C;
  }
  return total + P * P * E * E + E * cfg.lead_count + cfg.lead_count;
}

InputStack random_stack(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  InputStack s{c, h, w, std::vector<float>(c * h * w)};
  for (auto& v : s.values) v = u(rng);
  return s;
}

TEST(ModelConfig, Presets) {
  const auto full = ModelConfig::full(54, 6);
  EXPECT_EQ(full.embed_channels, 48u);
  EXPECT_EQ(full.depths, (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(full.spatial_multiple(), 16u);
  EXPECT_EQ(ModelConfig::mini(12, 1).spatial_multiple(), 8u);
  auto bad = full;
  bad.depths = {2, 0};
  EXPECT_THROW(bad.validate(), ContractError);
  bad = full;
  bad.lead_count = 0;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(ModelConfig, SidecarRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "icemamba_sidecar.txt").string();
  auto cfg = ModelConfig::mini(54, 6);
  cfg.depths = {1, 2, 3};
  write_model_sidecar(path, cfg, {{"stats_digest", "abc"}});
  std::map<std::string, std::string> extra;
  EXPECT_EQ(read_model_sidecar(path, &extra), cfg);
  EXPECT_EQ(extra.at("stats_digest"), "abc");
  std::filesystem::remove(path);
}

TEST(IceMamba, ParameterCountMatchesOracle) {
  for (const auto& cfg : {ModelConfig::mini(12, 1), ModelConfig::mini(54, 6), ModelConfig::full(54, 6),
                          ModelConfig::full(12, 1)}) {
    EXPECT_EQ(IceMamba<float>::build(cfg, 1).params().parameter_count(), model_count(cfg));
  }
  // Locked reference values.
  EXPECT_EQ(model_count(ModelConfig::full(54, 6)), 6471992u);
  EXPECT_EQ(model_count(ModelConfig::mini(12, 1)), 62442u);
}

TEST(IceMamba, OutputShapeOnUnalignedGrid) {
  auto model = IceMamba<float>::build(ModelConfig::mini(5, 3), 7);
  const auto out = model.predict(random_stack(5, 13, 10, 1));
  EXPECT_EQ(out.size(), 3u * 13 * 10);
  for (float v : out) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(IceMamba, RejectsWrongChannelCount) {
  auto model = IceMamba<float>::build(ModelConfig::mini(5, 3), 7);
  EXPECT_THROW(model.predict(random_stack(4, 8, 8, 1)), ShapeError);
  Mask land(64, 0);
  EXPECT_THROW(forecast_direct(model, random_stack(4, 8, 8, 1), land, Month{2000, 1}), ShapeError);
}

TEST(IceMamba, SameSeedIsBitIdentical) {
  const auto cfg = ModelConfig::mini(4, 2);
  auto a = IceMamba<float>::build(cfg, 11);
  auto b = IceMamba<float>::build(cfg, 11);
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
  const auto in = random_stack(4, 16, 16, 3);
  EXPECT_EQ(a.predict(in), b.predict(in));
  auto c = IceMamba<float>::build(cfg, 12);
  EXPECT_NE(a.params().snapshot(), c.params().snapshot());
}

TEST(IceMamba, LeadCountOnlyChangesHead) {
  auto one = IceMamba<float>::build(ModelConfig::mini(4, 1), 5);
  auto six = IceMamba<float>::build(ModelConfig::mini(4, 6), 5);
  ASSERT_EQ(one.params().size(), six.params().size());
  for (std::size_t i = 0; i < one.params().size(); ++i) {
    const auto& a = one.params().entries()[i];
    const auto& b = six.params().entries()[i];
    EXPECT_EQ(a.name, b.name);
    if (a.name.starts_with("head.")) continue;
    ASSERT_EQ(a.value.shape(), b.value.shape()) << a.name;
    EXPECT_TRUE(std::equal(a.value.values().begin(), a.value.values().end(), b.value.values().begin())) << a.name;
  }
}

TEST(IceMamba, CloneIsIndependent) {
  auto a = IceMamba<float>::build(ModelConfig::mini(3, 1), 2);
  auto b = a.clone();
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
  b.params().entries()[0].value.mutable_values()[0] += 1.0f;
  EXPECT_NE(a.params().snapshot(), b.params().snapshot());
}

TEST(IceMamba, CheckpointRoundTripReproducesForecast) {
  const auto path = (std::filesystem::temp_directory_path() / "icemamba_model.imck").string();
  auto a = IceMamba<float>::build(ModelConfig::mini(3, 2), 21);
  save_checkpoint(path, a.params());
  auto b = IceMamba<float>::build(ModelConfig::mini(3, 2), 99);
  load_checkpoint(path, b.params());
  const auto in = random_stack(3, 8, 8, 4);
  EXPECT_EQ(a.predict(in), b.predict(in));
  std::filesystem::remove(path);
}

TEST(IceMamba, FullModelLossGradient) {
  // Targets of 1.5 keep every residual on one side of the absolute value kink.
  auto cfg = ModelConfig::mini(3, 2);
  cfg.embed_channels = 4;
  cfg.state_size = 3;
  cfg.patch_size = 2;
  cfg.precision = "f64";
  auto model = IceMamba<double>::build(cfg, 3);
  for (auto& e : model.params().entries()) for (auto& v : e.value.mutable_values()) v *= 4.0;
  std::mt19937_64 rng(8);
  auto x = random_tensor<double>({3, 6, 5}, rng);
  std::vector<double> target(2 * 30, 1.5);
  Mask mask(30, 1);
  mask[0] = mask[7] = 0;
  std::vector<Tensor<double>> leaves{x};
  for (auto& e : model.params().entries()) leaves.push_back(e.value);
  auto rep = testing::fd_check<double>(
      [&] { return masked_mae(model.forward(x), std::span<const double>(target), std::span<const std::uint8_t>(mask)); },
      leaves, 60, 9);
  EXPECT_LT(rep.max_rel_error, 1e-5);
}

struct ShiftModel {
  ModelConfig cfg = ModelConfig::mini(kSicLags, 1);
  mutable std::size_t passes = 0;
  const ModelConfig& config() const { return cfg; }
  std::vector<float> predict(const InputStack& s) const {
    ++passes;
    const auto lag1 = s.channel(0);
    std::vector<float> out(lag1.begin(), lag1.end());
    for (auto& v : out) v += 0.25f;
    return out;
  }
};

TEST(Forecast, DirectClampsAndZeroesLand) {
  ShiftModel m;
  auto s = random_stack(kSicLags, 2, 2, 1);
  s.channel(0)[0] = 0.9f;
  s.channel(0)[1] = -0.8f;
  s.channel(0)[2] = 0.3f;
  Mask land{0, 0, 0, 1};
  const auto f = forecast_direct(m, s, land, Month{2010, 3});
  EXPECT_EQ(f.maps[0], 1.0f);
  EXPECT_EQ(f.maps[1], 0.0f);
  EXPECT_FLOAT_EQ(f.maps[2], 0.55f);
  EXPECT_EQ(f.maps[3], 0.0f);
  EXPECT_EQ(f.target(1), (Month{2010, 3}));
}

TEST(Forecast, AutoregressiveFeedsPredictions) {
  ShiftModel m;
  InputStack s{kSicLags, 1, 2, std::vector<float>(kSicLags * 2, 0.0f)};
  Mask land{0, 1};
  const auto f = forecast_autoregressive(m, s, land, Month{2010, 11}, 5);
  EXPECT_EQ(m.passes, 5u);
  EXPECT_EQ(f.leads, 5u);
  const float expected[5] = {0.25f, 0.5f, 0.75f, 1.0f, 1.0f};
  for (std::size_t l = 1; l <= 5; ++l) {
    EXPECT_FLOAT_EQ(f.map(l)[0], expected[l - 1]);
    EXPECT_EQ(f.map(l)[1], 0.0f);
  }
  EXPECT_EQ(f.target(3), (Month{2011, 1}));
}

TEST(Forecast, AutoregressiveRequiresSicOnlySingleLead) {
  ShiftModel m;
  m.cfg.lead_count = 2;
  InputStack s{kSicLags, 1, 1, std::vector<float>(kSicLags, 0.0f)};
  EXPECT_THROW(forecast_autoregressive(m, s, Mask{0}, Month{2000, 1}, 3), ContractError);
  m.cfg.lead_count = 1;
  m.cfg.input_channels = 54;
  EXPECT_THROW(forecast_autoregressive(m, s, Mask{0}, Month{2000, 1}, 3), ContractError);
}

TEST(Forecast, RealModelBoundsAndLand) {
  auto model = IceMamba<float>::build(ModelConfig::mini(4, 3), 4);
  for (auto& e : model.params().entries()) for (auto& v : e.value.mutable_values()) v *= 20.0f;
  auto s = random_stack(4, 8, 8, 2);
  Mask land(64, 0);
  for (std::size_t i = 0; i < 64; i += 5) land[i] = 1;
  const auto f = forecast_direct(model, s, land, Month{2001, 1});
  for (std::size_t i = 0; i < f.maps.size(); ++i) {
    EXPECT_GE(f.maps[i], 0.0f);
    EXPECT_LE(f.maps[i], 1.0f);
    if (land[i % 64]) EXPECT_EQ(f.maps[i], 0.0f);
  }
}

}  // namespace
}  // namespace icemamba
