// Acceptance gate: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "fd_check.hpp"
#include "icemamba/app.hpp"
#include "icemamba/explain.hpp"

using namespace icemamba;
using testing::fd_check;
using testing::FdReport;
using testing::random_tensor;
using testing::weighted_sum;
namespace fs = std::filesystem;
using Td = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI in-process with its stdout discarded.
int quiet_run(std::vector<std::string> args) {
  args.insert(args.begin(), "icemamba");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::fflush(stdout);
  const int saved = dup(STDOUT_FILENO);
  std::FILE* null = std::fopen("/dev/null", "w");
  dup2(fileno(null), STDOUT_FILENO);
  const int code = run(static_cast<int>(argv.size()), argv.data());
  std::fflush(stdout);
  dup2(saved, STDOUT_FILENO);
  close(saved);
  std::fclose(null);
  return code;
}

Outcome ssm_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 64), st(1, 16), ch(1, 4);
  std::uniform_real_distribution<double> neg(-3.0, -0.05), u(-1.0, 1.0), bias(-3.0, 1.0);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t L = len(rng), N = st(rng), C = ch(rng);
    SsmParams<double> p;
    p.channels = C;
    p.state = N;
    p.a.resize(C * N);
    for (auto& v : p.a) v = neg(rng);
    p.d.resize(C);
    for (auto& v : p.d) v = u(rng);
    p.delta_weight.assign(C * C, 0.0);
    p.b_weight.assign(C * N, 0.0);
    p.c_weight.assign(C * N, 0.0);
    p.delta_bias.resize(C);
    for (auto& v : p.delta_bias) v = bias(rng);
    p.b_bias.resize(N);
    p.c_bias.resize(N);
    for (auto& v : p.b_bias) v = u(rng);
    for (auto& v : p.c_bias) v = u(rng);
    const ScanSequence<double> seq{ScanOrder::row_major, random_tensor<double>({L, C}, rng, 1.0, false)};
    const auto rec = selective_scan(seq, p);
    const auto conv = lti_conv_scan(seq, p);
    double gap = 0.0, scale = 1e-300;
    for (std::size_t i = 0; i < rec.x.size(); ++i) {
      gap = std::max(gap, std::abs(rec.x[i] - conv.x[i]));
      scale = std::max(scale, std::abs(conv.x[i]));
    }
    worst = std::max(worst, gap / scale);
  }
  return {worst <= 1e-10, fmt("100 draws, worst relative gap %.3g", worst)};
}

Outcome gradient_suite() {
  std::mt19937_64 rng(77);
  std::vector<std::pair<std::string, std::function<FdReport()>>> cases;
  auto probe = [&](std::string name, std::function<FdReport()> f) { cases.emplace_back(std::move(name), std::move(f)); };
  std::uint64_t probe_seed = 1;
  auto check = [&](std::function<Td()> loss, std::vector<Td> leaves) {
    return fd_check<double>(loss, std::move(leaves), 24, probe_seed++);
  };

  for (auto kind : {Activation::silu, Activation::tanh, Activation::sigmoid, Activation::softplus}) {
    const char* names[] = {"silu", "tanh", "sigmoid", "softplus"};
    probe(names[static_cast<int>(kind)], [&, kind] {
      auto x = random_tensor<double>({4, 5}, rng);
      return check([=] { return weighted_sum(activation(x, kind), 1); }, {x});
    });
  }
  probe("exp", [&] {
    auto x = random_tensor<double>({3, 4}, rng, 0.5);
    return check([=] { return weighted_sum(icemamba::exp(x), 2); }, {x});
  });
  probe("add", [&] {
    auto a = random_tensor<double>({3, 4}, rng), b = random_tensor<double>({3, 4}, rng);
    return check([=] { return weighted_sum(add(a, b), 3); }, {a, b});
  });
  probe("sub", [&] {
    auto a = random_tensor<double>({3, 4}, rng), b = random_tensor<double>({3, 4}, rng);
    return check([=] { return weighted_sum(sub(a, b), 4); }, {a, b});
  });
  probe("mul", [&] {
    auto a = random_tensor<double>({3, 4}, rng), b = random_tensor<double>({3, 4}, rng);
    return check([=] { return weighted_sum(mul(a, b), 5); }, {a, b});
  });
  probe("scale", [&] {
    auto a = random_tensor<double>({3, 4}, rng);
    return check([=] { return weighted_sum(scale(a, 1.7), 6); }, {a});
  });
  probe("sum", [&] {
    auto a = random_tensor<double>({3, 4}, rng);
    return check([=] { return mul(sum(a), sum(a)); }, {a});
  });
  probe("mean", [&] {
    auto a = random_tensor<double>({3, 4}, rng);
    return check([=] { return mul(mean(a), sum(a)); }, {a});
  });
  probe("linear(last)", [&] {
    auto x = random_tensor<double>({5, 4}, rng), w = random_tensor<double>({4, 3}, rng), b = random_tensor<double>({3}, rng);
    return check([=] { return weighted_sum(linear(x, w, b), 7); }, {x, w, b});
  });
  probe("linear(first)", [&] {
    auto x = random_tensor<double>({4, 2, 3}, rng), w = random_tensor<double>({4, 3}, rng), b = random_tensor<double>({3}, rng);
    return check([=] { return weighted_sum(linear(x, w, b, Axis::first), 8); }, {x, w, b});
  });
  probe("depthwise_conv2d", [&] {
    auto x = random_tensor<double>({3, 5, 4}, rng), k = random_tensor<double>({3, 3, 3}, rng);
    return check([=] { return weighted_sum(depthwise_conv2d(x, k), 9); }, {x, k});
  });
  probe("layer_norm(last)", [&] {
    auto x = random_tensor<double>({3, 6}, rng), g = random_tensor<double>({6}, rng), b = random_tensor<double>({6}, rng);
    return check([=] { return weighted_sum(layer_norm(x, g, b), 10); }, {x, g, b});
  });
  probe("layer_norm(first)", [&] {
    auto x = random_tensor<double>({6, 2, 3}, rng), g = random_tensor<double>({6}, rng), b = random_tensor<double>({6}, rng);
    return check([=] { return weighted_sum(layer_norm(x, g, b, 1e-5, Axis::first), 11); }, {x, g, b});
  });
  probe("global_average_pool", [&] {
    auto x = random_tensor<double>({3, 4, 5}, rng);
    return check([=] { return weighted_sum(global_average_pool(x), 12); }, {x});
  });
  probe("conv1d_same", [&] {
    auto v = random_tensor<double>({7}, rng), k = random_tensor<double>({3}, rng);
    return check([=] { return weighted_sum(conv1d_same(v, k), 13); }, {v, k});
  });
  probe("scale_channels", [&] {
    auto x = random_tensor<double>({3, 2, 4}, rng), w = random_tensor<double>({3}, rng);
    return check([=] { return weighted_sum(scale_channels(x, w), 14); }, {x, w});
  });
  probe("gather", [&] {
    auto x = random_tensor<double>({10}, rng);
    return check([=] { return weighted_sum(gather(x, {3, 3, kZeroIndex, 9, 0, 1}, {2, 3}), 15); }, {x});
  });
  probe("transpose2d", [&] {
    auto x = random_tensor<double>({3, 5}, rng);
    return check([=] { return weighted_sum(transpose2d(x), 16); }, {x});
  });
  probe("reshape", [&] {
    auto x = random_tensor<double>({3, 4}, rng);
    return check([=] { return weighted_sum(reshape(x, {2, 6}), 17); }, {x});
  });
  probe("space_to_depth", [&] {
    auto x = random_tensor<double>({2, 4, 6}, rng);
    return check([=] { return weighted_sum(space_to_depth(x, 2), 18); }, {x});
  });
  probe("depth_to_space", [&] {
    auto x = random_tensor<double>({8, 2, 3}, rng);
    return check([=] { return weighted_sum(depth_to_space(x, 2), 19); }, {x});
  });
  probe("pad2d", [&] {
    auto x = random_tensor<double>({2, 3, 3}, rng);
    return check([=] { return weighted_sum(pad2d(x, 5, 4), 20); }, {x});
  });
  probe("crop2d", [&] {
    auto x = random_tensor<double>({2, 5, 4}, rng);
    return check([=] { return weighted_sum(crop2d(x, 3, 3), 21); }, {x});
  });
  probe("masked_mae", [&] {
    auto x = random_tensor<double>({2, 3, 3}, rng);
    std::vector<double> target(18, 4.0);
    Mask mask(9, 1);
    mask[4] = 0;
    return check([=] { return masked_mae(x, std::span<const double>(target), std::span<const std::uint8_t>(mask)); }, {x});
  });
  probe("selective_scan", [&] {
    const std::size_t L = 9, C = 3, N = 4;
    auto x = random_tensor<double>({L, C}, rng), dt = random_tensor<double>({L, C}, rng);
    auto a = random_tensor<double>({C, N}, rng, 0.5), b = random_tensor<double>({L, N}, rng);
    auto c = random_tensor<double>({L, N}, rng), d = random_tensor<double>({C}, rng);
    return check([=] { return weighted_sum(selective_scan_op(x, softplus(dt), scale(icemamba::exp(a), -1.0), b, c, d), 22); },
                 {x, dt, a, b, c, d});
  });
  probe("cross_scan+cross_merge", [&] {
    auto x = random_tensor<double>({2, 3, 4}, rng);
    auto w = random_tensor<double>({2, 2}, rng);
    return check([=] {
      auto seqs = cross_scan(x);
      for (std::size_t k = 0; k < 4; ++k) seqs[k].x = linear(seqs[k].x, scale(w, 1.0 + k));
      return weighted_sum(cross_merge(seqs, 3, 4), 23);
    }, {x, w});
  });
  auto with_store = [&](auto build, auto forward, Shape shape, std::uint64_t seed) {
    return [&rng, build, forward, shape, seed, &check] {
      ParamStore<double> store;
      auto w = build(store);
      for (auto& e : store.entries()) for (auto& v : e.value.mutable_values()) v *= 3.0;
      auto x = random_tensor<double>(shape, rng);
      std::vector<Td> leaves{x};
      for (auto& e : store.entries()) leaves.push_back(e.value);
      return check([=] { return weighted_sum(forward(x, w), seed); }, leaves);
    };
  };
  probe("eca", with_store([&](auto& s) { return make_eca_weights<double>(s, "e", 4, rng); },
                        [](const Td& x, const auto& w) { return eca_forward(x, w); }, {4, 2, 3}, 24));
  probe("ss2d", with_store([&](auto& s) {
        std::array<SsmWeights<double>, 4> d;
        for (std::size_t k = 0; k < 4; ++k) d[k] = make_ssm_weights<double>(s, "s" + std::to_string(k), 2, 3, rng);
        return d;
      }, [](const Td& x, const auto& w) { return ss2d_forward(x, w); }, {2, 2, 3}, 25));
  probe("vssb", with_store([&](auto& s) { return make_vssb_weights<double>(s, "v", 3, 3, 2, rng); },
                         [](const Td& x, const auto& w) { return vssb_forward(x, w); }, {3, 3, 3}, 26));
  probe("ressb", with_store([&](auto& s) { return make_ressb_weights<double>(s, "r", 4, 4, 2, rng); },
                          [](const Td& x, const auto& w) { return ressb_forward(x, w); }, {4, 2, 3}, 27));
  probe("patch_embed", [&] {
    auto x = random_tensor<double>({2, 4, 4}, rng), w = random_tensor<double>({8, 3}, rng), b = random_tensor<double>({3}, rng);
    return check([=] { return weighted_sum(patch_embed(x, PatchEmbedWeights<double>{w, b}, 2), 28); }, {x, w, b});
  });
  probe("patch_merge", [&] {
    auto x = random_tensor<double>({2, 4, 4}, rng), w = random_tensor<double>({8, 4}, rng);
    return check([=] { return weighted_sum(patch_rescale(x, w, Rescale::merge), 29); }, {x, w});
  });
  probe("patch_expand", [&] {
    auto x = random_tensor<double>({2, 4, 4}, rng), w = random_tensor<double>({2, 4}, rng);
    return check([=] { return weighted_sum(patch_rescale(x, w, Rescale::expand), 30); }, {x, w});
  });
  probe("final_expand", [&] {
    auto x = random_tensor<double>({2, 4, 4}, rng), w = random_tensor<double>({2, 8}, rng);
    return check([=] { return weighted_sum(patch_rescale(x, w, Rescale::final_expand, 2), 31); }, {x, w});
  });
  probe("output_head", [&] {
    auto x = random_tensor<double>({3, 4, 4}, rng), w = random_tensor<double>({3, 2}, rng), b = random_tensor<double>({2}, rng);
    return check([=] { return weighted_sum(output_head(x, OutputHeadWeights<double>{w, b}), 32); }, {x, w, b});
  });
  probe("mini_model_loss", [&] {
    auto cfg = ModelConfig::mini(3, 2);
    cfg.embed_channels = 4;
    cfg.state_size = 3;
    cfg.patch_size = 2;
    cfg.precision = "f64";
    auto model = IceMamba<double>::build(cfg, 3);
    for (auto& e : model.params().entries()) for (auto& v : e.value.mutable_values()) v *= 4.0;
    auto x = random_tensor<double>({3, 6, 5}, rng);
    std::vector<double> target(2 * 30, 1.5);
    Mask mask(30, 1);
    mask[0] = mask[7] = 0;
    std::vector<Td> leaves{x};
    for (auto& e : model.params().entries()) leaves.push_back(e.value);
    return fd_check<double>(
        [&] { return masked_mae(model.forward(x), std::span<const double>(target), std::span<const std::uint8_t>(mask)); },
        leaves, 60, 99);
  });

  double worst = 0.0;
  std::string worst_name, failed;
  std::size_t min_probes = SIZE_MAX;
  for (auto& [name, fn] : cases) {
    const auto rep = fn();
    min_probes = std::min(min_probes, rep.probes);
    if (rep.max_rel_error >= worst) {
      worst = rep.max_rel_error;
      worst_name = name;
    }
    if (!(rep.max_rel_error < 1e-5) || rep.probes < 20) failed += " " + name;
  }
  return {failed.empty() && min_probes >= 20,
          fmt("%zu operations, >=%zu probes each, worst %s %.3g%s", cases.size(), min_probes, worst_name.c_str(), worst,
              failed.empty() ? "" : (" failing:" + failed).c_str())};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_real_distribution<double> cl(0.0, 1.0);
  const std::size_t H = 16, W = 16, n = H * W;
  double worst = 0.0;
  bool decomposes = true;
  std::size_t acc_trials = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> p(n), o(n);
    std::vector<double> clim(n);
    Mask m(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(rng);
      o[i] = u(rng);
      clim[i] = cl(rng);
      m[i] = u(rng) < 0.8f;
    }
    // Brute force over rows and columns.
    double abs_sum = 0, sq_sum = 0, count = 0, over = 0, under = 0;
    std::vector<double> pa, oa;
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const std::size_t i = r * W + c;
        if (!m[i]) continue;
        const double d = static_cast<double>(p[i]) - static_cast<double>(o[i]);
        abs_sum += std::fabs(d);
        sq_sum += d * d;
        count += 1;
        const bool fi = p[i] >= 0.15f ? true : static_cast<double>(p[i]) >= 0.15;
        const bool oi = static_cast<double>(o[i]) >= 0.15;
        if (fi && !oi) over += 625.0;
        if (!fi && oi) under += 625.0;
        pa.push_back(p[i] - clim[i]);
        oa.push_back(o[i] - clim[i]);
      }
    }
    const double mae = 100.0 * abs_sum / count, rmse = 100.0 * std::sqrt(sq_sum / count);
    double mp = 0, mo = 0;
    for (std::size_t k = 0; k < pa.size(); ++k) {
      mp += pa[k];
      mo += oa[k];
    }
    mp /= static_cast<double>(pa.size());
    mo /= static_cast<double>(oa.size());
    double cov = 0, vp = 0, vo = 0;
    for (std::size_t k = 0; k < pa.size(); ++k) {
      cov += (pa[k] - mp) * (oa[k] - mo);
      vp += (pa[k] - mp) * (pa[k] - mp);
      vo += (oa[k] - mo) * (oa[k] - mo);
    }
    const double acc_ref = cov / std::sqrt(vp * vo);

    std::vector<double> pan(n), oan(n);
    for (std::size_t i = 0; i < n; ++i) {
      pan[i] = p[i] - clim[i];
      oan[i] = o[i] - clim[i];
    }
    const auto e = iiee(p, o, m);
    decomposes = decomposes && e.iiee == e.oe + e.ue;
    worst = std::max({worst, std::abs(masked_error(p, o, m, ErrorKind::mae) - mae),
                      std::abs(masked_error(p, o, m, ErrorKind::rmse) - rmse), std::abs(e.oe - over),
                      std::abs(e.ue - under), std::abs(e.iiee - (over + under)), std::abs(acc(pan, oan, m) - acc_ref)});
    ++acc_trials;
  }
  return {worst <= 1e-12 && decomposes,
          fmt("1000 masked 16x16 pairs, worst |diff| %.3g, IIEE=OE+UE %s", worst, decomposes ? "always" : "violated")};
}

Outcome baseline_oracles() {
  auto series = [](std::size_t cells, Month first, std::size_t steps, float fill) {
    GridSeries g;
    g.variable = "siconc";
    g.height = 1;
    g.width = cells;
    g.months = month_range(first, steps);
    g.values.assign(steps * cells, fill);
    g.land.assign(cells, 0);
    return g;
  };
  auto at = [](GridSeries& g, Month m, std::size_t cell = 0) -> float& {
    return g.values[*g.index_of(m) * g.cells() + cell];
  };
  // Hand example: January climatology 0.3 with the last January at 0.4; February climatology 0.5.
  auto g = series(1, {1990, 1}, 144, 0.0f);
  for (int y = 1991; y <= 2000; ++y) at(g, {y, 2}) = 0.5f;
  for (int y = 1992; y <= 2000; ++y) at(g, {y, 1}) = static_cast<float>((3.0 - 0.4) / 9.0);
  at(g, {2001, 1}) = 0.4f;
  const double hand = anomaly_persistence(g, {2001, 2}, 1).map(1)[0];
  const bool hand_ok = std::abs(hand - 0.6) <= 1e-6;

  auto lin = series(3, {1980, 1}, 12 * 20, 0.0f);
  for (std::size_t t = 0; t < lin.steps(); ++t)
    for (std::size_t i = 0; i < 3; ++i)
      lin.values[t * 3 + i] = static_cast<float>(0.9 - 0.01 * (lin.months[t].year - 1980) * (i + 1) - 0.002 * lin.months[t].month);
  const auto tc = trend_climatology(lin, {2000, 1}, 6);
  double trend_err = 0.0;
  for (std::size_t l = 1; l <= 6; ++l)
    for (std::size_t i = 0; i < 3; ++i) {
      const Month m = tc.target(l);
      trend_err = std::max(trend_err, std::abs(tc.map(l)[i] - (0.9 - 0.01 * (m.year - 1980) * (i + 1) - 0.002 * m.month)));
    }
  const bool trend_ok = trend_err <= 1e-6;

  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.05);
  const std::size_t cells = 50;
  auto ar = series(cells, {1980, 1}, 12 * 30, 0.0f);
  std::vector<double> a(cells, 0.0);
  for (std::size_t t = 0; t < ar.steps(); ++t)
    for (std::size_t i = 0; i < cells; ++i) {
      a[i] = 0.5 * a[i] + noise(rng);
      ar.values[t * cells + i] = static_cast<float>(0.5 + 0.2 * std::cos(2 * std::numbers::pi * t / 12.0) + a[i]);
    }
  const auto r = damped_coefficients(ar, {2010, 1}, 1);
  double mean_r = 0;
  for (double v : r) mean_r += v / static_cast<double>(cells);
  const bool ar_ok = std::abs(mean_r - 0.5) <= 0.1;
  return {hand_ok && trend_ok && ar_ok,
          fmt("hand example %.7f, linear trend max err %.2g, AR(1) estimate %.3f", hand, trend_err, mean_r)};
}

Outcome rolling_windows() {
  std::string bad;
  for (int y = 2001; y <= 2020; ++y) {
    const auto s = rolling_splits(y);
    bool ok = s.train.first == 1979 && s.train.last == y - 5 && s.valid.first == y - 4 && s.valid.last == y - 1 &&
              s.test.first == y && s.test.last == y;
    const std::vector<VariableSpec> specs = resolve_config(ConfigText{}).data.covariates;
    for (const auto& range : {s.train, s.valid}) {
      for (const auto& init : sample_inits(range, 6, max_lag(specs))) {
        if (init.plus(-static_cast<long>(kSicLags)) < range.begin() || range.end() < init.plus(5)) ok = false;
        if (!(init.plus(5) < Month{y, 1})) ok = false;
      }
    }
    if (!ok) bad += " " + std::to_string(y);
  }
  return {bad.empty(), bad.empty() ? "Y=2001..2020: train 1979..Y-5, valid Y-4..Y-1, no sample touches year Y"
                                   : "mismatch for" + bad};
}

struct ToyContext {
  Dataset data;
  Splits splits = custom_splits({1979, 1998}, {1999, 2002}, {2003, 2008});
  ModelConfig model = ModelConfig::mini(0, 4);
  TrainConfig train;
  std::vector<Month> inits;
  std::optional<TrainedModel<float>> first;
};

ToyContext& toy() {
  static ToyContext ctx = [] {
    ToyContext c;
    c.data = dataset_from(generate_synthetic(SyntheticConfig{}));
    c.train.max_epochs = 20;
    c.train.patience = 5;
    c.inits = evaluation_inits(c.splits, c.model.lead_count, max_lag(c.data.covariates));
    return c;
  }();
  return ctx;
}

Outcome toy_skill() {
  auto& c = toy();
  std::vector<ForecastSet> ap;
  for (const auto& m : c.inits) ap.push_back(anomaly_persistence(c.data.sic(), m, c.model.lead_count));
  const double ap_mae = mean_mae(ap, c.data);
  const std::uint64_t seeds[] = {1, 2, 3, 4};
  std::vector<double> mae(4);
  std::vector<std::optional<TrainedModel<float>>> models(4);
  parallel_for(4, [&](std::size_t k) {
    auto tc = c.train;
    tc.seed = seeds[k];
    models[k] = train_model<float>(c.data, c.splits, c.model, tc);
    mae[k] = mean_mae(forecast_inits(models[k]->model, c.data, models[k]->prepared, c.inits), c.data);
  });
  c.first = std::move(models[0]);
  int wins = 0;
  std::string per_seed;
  for (std::size_t k = 0; k < 4; ++k) {
    wins += mae[k] < ap_mae;
    per_seed += fmt("%s%.3f", k ? "/" : "", mae[k]);
  }
  return {wins >= 3, fmt("64x64x30y mini IceMamba-4, MAE %s%% vs anomaly persistence %.3f%% (%zu inits), %d/4 seeds better",
                         per_seed.c_str(), ap_mae, c.inits.size(), wins)};
}

Outcome explainability() {
  auto& c = toy();
  if (!c.first) {
    auto tc = c.train;
    tc.seed = 1;
    c.first = train_model<float>(c.data, c.splits, c.model, tc);
  }
  const auto seeds = permutation_seeds(1, 10);
  const std::vector<std::string> vars{"sst", "gp250", "u10"};
  const auto set = eval_set_for(c.data, c.first->prepared, c.inits, c.model.lead_count);
  const auto raw = variable_importance(c.first->model, set, sample_layout(c.data.covariates), vars, seeds);
  const double causal = raw.mean_delta({"sst", 0}), noise = raw.mean_delta({"gp250", 0}),
               trend = raw.mean_delta({"u10", 0});

  const auto dd = detrended(c.data, "u10");
  auto tc = c.train;
  tc.seed = 1;
  const auto retrained = train_model<float>(dd, c.splits, c.model, tc);
  const auto set2 = eval_set_for(dd, retrained.prepared, c.inits, c.model.lead_count);
  const double trend_after =
      variable_importance(retrained.model, set2, sample_layout(dd.covariates), {"u10"}, seeds).mean_delta({"u10", 0});

  const bool discriminates = causal >= 2.0 * noise && causal > 0.0;
  const bool collapses = trend > 0.0 && trend_after <= 0.5 * trend;
  return {discriminates && collapses,
          fmt("dMAE sst %.4f vs gp250 %.4f (ratio %.1f); u10 %.4f -> %.4f after detrending (%.0f%% drop)", causal, noise,
              noise != 0.0 ? causal / noise : INFINITY, trend, trend_after,
              trend != 0.0 ? 100.0 * (1.0 - trend_after / trend) : 0.0)};
}

Outcome determinism(const fs::path& work) {
  const auto dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto cfg = dir / "run.ini";
  std::ofstream(cfg) << "[model]\nlead_count = 4\n\n[train]\nmax_epochs = 2\nseed = 7\n\n"
                        "[split]\nmode = custom\ntrain = 1979-1998\nvalid = 1999-2002\ntest = 2003-2008\n\n"
                        "[explain]\nseeds = 2\nvariables = sst, gp250, u10\n";
  const auto out = dir / "out";
  auto pass = [&]() -> std::optional<std::map<std::string, std::string>> {
    fs::remove_all(out);
    for (const char* cmd : {"train", "forecast", "evaluate", "explain"}) {
      if (quiet_run({cmd, "--config", cfg.string(), "--out", out.string()}) != 0) return std::nullopt;
    }
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
      if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = slurp(e.path());
    }
    return files;
  };
  const auto a = pass();
  const auto b = pass();
  if (!a || !b) return {false, "a CLI command failed"};
  const char* required[] = {"history.csv", "forecasts.csv", "metrics.csv", "importance.csv"};
  for (const char* r : required) {
    if (!a->count(r)) return {false, std::string("missing ") + r};
  }
  std::string differing;
  for (const auto& [name, bytes] : *a) {
    const auto it = b->find(name);
    if (it == b->end() || it->second != bytes) differing += " " + name;
  }
  if (a->size() != b->size()) differing += " (file sets differ)";
  return {differing.empty(), differing.empty() ? fmt("%zu artifacts byte-identical across reruns (history, forecasts, "
                                                     "metrics, importance, manifests)", a->size())
                                               : "differs:" + differing};
}

Outcome shape_format(const fs::path& work) {
  const auto dir = work / "format";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string problems;

  // Full configuration on the 448x304 grid.
  ConfigText text;
  text.set("model.preset", "full");
  std::string all;
  for (const auto& v : all_covariates()) all += (all.empty() ? "" : ",") + v.id;
  text.set("data.covariates", all);
  const auto cfg = resolve_config(text);
  const auto model = IceMamba<float>::build(cfg.model, 1);
  const std::size_t H = 448, W = 304;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  InputStack s{cfg.model.input_channels, H, W, std::vector<float>(cfg.model.input_channels * H * W)};
  for (auto& v : s.values) v = u(rng);
  Mask land(H * W, 0);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const double dy = (r - H / 2.0) / H, dx = (c - W / 2.0) / W;
      land[r * W + c] = dx * dx + dy * dy > 0.16 || (r % 37 == 0 && c % 11 == 0);
    }
  const auto f = forecast_direct(model, s, land, Month{2020, 1});
  const bool shape = f.leads == cfg.model.lead_count && f.height == H && f.width == W && f.maps.size() == f.leads * H * W;
  bool land_zero = true, in_range = true;
  for (std::size_t l = 1; l <= f.leads; ++l)
    for (std::size_t i = 0; i < H * W; ++i) {
      const float v = f.map(l)[i];
      if (land[i] && v != 0.0f) land_zero = false;
      if (!(v >= 0.0f && v <= 1.0f)) in_range = false;
    }
  if (!shape || !land_zero || !in_range) problems += " full-grid output";

  // IMGR round trip.
  auto& c = toy();
  const auto imgr = (dir / "siconc.imgr").string(), again = (dir / "siconc_again.imgr").string();
  write_grid(imgr, c.data.sic());
  const auto back = read_grid(imgr);
  write_grid(again, back);
  const bool lossless = back.values == c.data.sic().values && back.land == c.data.sic().land &&
                        back.months == c.data.sic().months && slurp(imgr) == slurp(again);
  if (!lossless) problems += " imgr";

  // 12 x 6 heatmap and seasonal cycle.
  std::vector<ForecastSet> ap;
  for (const auto& m : evaluation_inits(c.splits, 6, max_lag(c.data.covariates)))
    ap.push_back(anomaly_persistence(c.data.sic(), m, 6));
  const auto table = score_all(ap, c.data, c.splits, MetricConfig{});
  const std::vector<std::string> metrics{"mae", "rmse", "iiee", "oe", "ue", "acc"};
  const auto heat = (dir / "heatmap.csv").string(), seas = (dir / "seasonal.csv").string();
  write_heatmap_csv(heat, table, metrics, 6);
  write_seasonal_csv(seas, table, metrics);
  std::istringstream hs(slurp(heat));
  std::string line;
  std::getline(hs, line);
  bool heat_ok = line == "metric,unit,target_month,lead_1,lead_2,lead_3,lead_4,lead_5,lead_6";
  std::size_t rows = 0;
  while (std::getline(hs, line)) {
    const auto month = std::to_string(rows % 12 + 1);
    heat_ok = heat_ok && line.find(',' + month + ',') != std::string::npos && line.find("NA") == std::string::npos &&
              std::count(line.begin(), line.end(), ',') == 8;
    ++rows;
  }
  heat_ok = heat_ok && rows == 12 * metrics.size();
  std::istringstream ss(slurp(seas));
  std::getline(ss, line);
  bool seas_ok = line == "target_month,mae_percent,rmse_percent,iiee_km2,oe_km2,ue_km2,acc_dimensionless";
  std::size_t srows = 0;
  while (std::getline(ss, line)) {
    seas_ok = seas_ok && line.rfind(std::to_string(srows + 1) + ",", 0) == 0 && line.find("NA") == std::string::npos;
    ++srows;
  }
  seas_ok = seas_ok && srows == 12;
  if (!heat_ok) problems += " heatmap";
  if (!seas_ok) problems += " seasonal";
  return {problems.empty(),
          problems.empty() ? fmt("[%zu,%zu,%zu] full-grid forecast with land 0 and values in [0,1]; IMGR lossless; "
                                 "12x6 heatmap and 12-month seasonal CSV complete",
                                 f.leads, f.height, f.width)
                           : "failed:" + problems};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "icemamba_acceptance";
  fs::create_directories(work);
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_s;  // 0 = no runtime bound
  };
  const std::vector<Criterion> criteria{
      {"ssm_equivalence", ssm_equivalence, 5.0},
      {"gradient_suite", gradient_suite, 60.0},
      {"metric_oracles", metric_oracles, 0.0},
      {"baseline_oracles", baseline_oracles, 0.0},
      {"rolling_windows", rolling_windows, 0.0},
      {"toy_skill", toy_skill, 900.0},
      {"explainability", explainability, 0.0},
      {"determinism", [&] { return determinism(work); }, 0.0},
      {"shape_format", [&] { return shape_format(work); }, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s budget]", c.budget_s);
    }
    failures += !o.pass;
    std::printf("%s %-17s %8.1fs  %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%s: %d of %zu criteria failed\n", failures ? "FAIL" : "PASS", failures, criteria.size());
  return failures ? 1 : 0;
}
