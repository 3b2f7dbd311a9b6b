#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "icemamba/blocks.hpp"
#include "icemamba/types.hpp"

namespace icemamba {

struct ModelConfig {
  std::size_t input_channels = kSicLags;
  std::size_t embed_channels = 48;
  std::vector<std::size_t> depths = {2, 2, 2};
  std::size_t state_size = 16;
  std::size_t patch_size = 4;
  std::size_t lead_count = 6;
  std::size_t inner_ratio = 2;  // VSSB inner width = ratio * stage channels
  std::string precision = "f32";

  /// Full-grid default.
  static ModelConfig full(std::size_t input_channels, std::size_t leads) {
    ModelConfig cfg;
    cfg.input_channels = input_channels;
    cfg.lead_count = leads;
    return cfg;
  }

  /// Desk-scale preset.
  static ModelConfig mini(std::size_t input_channels, std::size_t leads) {
    ModelConfig cfg;
    cfg.input_channels = input_channels;
    cfg.lead_count = leads;
    cfg.embed_channels = 16;
    cfg.depths = {1, 1};
    cfg.inner_ratio = 1;
    return cfg;
  }

  std::size_t stages() const { return depths.size(); }
  /// Spatial extents are padded to a multiple of this.
  std::size_t spatial_multiple() const { return patch_size << (stages() - 1); }

  void validate() const {
    if (input_channels == 0 || embed_channels == 0 || state_size == 0 || patch_size == 0 ||
        inner_ratio == 0) {
      throw ContractError("ModelConfig: channel, state, ratio and patch sizes must be positive");
    }
    if (lead_count == 0) throw ContractError("ModelConfig: lead_count must be at least 1");
    if (depths.empty() || depths.size() > 8) {
      throw ContractError("ModelConfig: between 1 and 8 stages are supported");
    }
    if (std::any_of(depths.begin(), depths.end(), [](std::size_t d) { return d == 0; })) {
      throw ContractError("ModelConfig: every stage needs at least one block");
    }
    if (precision != "f32" && precision != "f64") {
      throw ContractError("ModelConfig: precision must be f32 or f64");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Key=value rendering used by the model sidecar file.
inline std::string to_record(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "input_channels=" << cfg.input_channels << '\n'
     << "embed_channels=" << cfg.embed_channels << '\n'
     << "depths=";
  for (std::size_t i = 0; i < cfg.depths.size(); ++i) os << (i ? "," : "") << cfg.depths[i];
  os << '\n'
     << "state_size=" << cfg.state_size << '\n'
     << "patch_size=" << cfg.patch_size << '\n'
     << "lead_count=" << cfg.lead_count << '\n'
     << "inner_ratio=" << cfg.inner_ratio << '\n'
     << "precision=" << cfg.precision << '\n';
  return os.str();
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw UsageError("malformed integer list '" + text + "'");
    }
  }
  return out;
}

/// Applies one key of the model record; returns false for keys it does not own.
inline bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  auto num = [&](std::size_t& dst) {
    try {
      dst = static_cast<std::size_t>(std::stoul(value));
    } catch (const std::exception&) {
      throw UsageError("model key '" + key + "' expects an integer, got '" + value + "'");
    }
  };
  if (key == "input_channels") num(cfg.input_channels);
  else if (key == "embed_channels") num(cfg.embed_channels);
  else if (key == "depths") cfg.depths = parse_size_list(value);
  else if (key == "state_size") num(cfg.state_size);
  else if (key == "patch_size") num(cfg.patch_size);
  else if (key == "lead_count") num(cfg.lead_count);
  else if (key == "inner_ratio") num(cfg.inner_ratio);
  else if (key == "precision") cfg.precision = value;
  else return false;
  return true;
}

/// Writes the sidecar: the model record plus free-form extra identifiers
/// (e.g. preprocessing statistics).
inline void write_model_sidecar(const std::string& path, const ModelConfig& cfg,
                                const std::map<std::string, std::string>& extra = {}) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path + "'");
  os << to_record(cfg);
  for (const auto& [k, v] : extra) os << k << '=' << v << '\n';
}

inline ModelConfig read_model_sidecar(const std::string& path,
                                      std::map<std::string, std::string>* extra = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read model sidecar '" + path + "'");
  ModelConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed sidecar line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (!apply_model_key(cfg, key, value) && extra) (*extra)[key] = value;
  }
  cfg.validate();
  return cfg;
}

/// Encoder-decoder of RESSB stages joined by patch merging/expanding, with
/// additive skip connections at mirrored scales.
template <class T>
class IceMamba {
 public:
  static IceMamba build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    IceMamba m;
    m.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    auto& s = m.params_;
    const std::size_t P = cfg.patch_size, E = cfg.embed_channels, N = cfg.state_size;
    const std::size_t S = cfg.stages();
    const std::size_t patch_in = cfg.input_channels * P * P;
    m.embed_.weight = s.add("embed.weight", {patch_in, E}, truncated_normal<T>(patch_in * E, 0.02, rng));
    m.embed_.bias = s.add("embed.bias", {E}, std::vector<T>(E, T(0)));
    for (std::size_t st = 0; st < S; ++st) {
      const std::size_t C = E << st;
      std::vector<RessbWeights<T>> blocks;
      for (std::size_t b = 0; b < cfg.depths[st]; ++b) {
        blocks.push_back(make_ressb_weights(s, "enc" + std::to_string(st) + ".block" + std::to_string(b),
                                            C, C * cfg.inner_ratio, N, rng));
      }
      m.encoder_.push_back(std::move(blocks));
      if (st + 1 < S) {
        m.merges_.push_back(s.add("merge" + std::to_string(st), {4 * C, 2 * C},
                                  truncated_normal<T>(8 * C * C, 0.02, rng)));
      }
    }
    for (std::size_t st = S - 1; st-- > 0;) {
      const std::size_t C = E << st;
      m.expands_.push_back(s.add("expand" + std::to_string(st), {2 * C, 4 * C},
                                 truncated_normal<T>(8 * C * C, 0.02, rng)));
      std::vector<RessbWeights<T>> blocks;
      for (std::size_t b = 0; b < cfg.depths[st]; ++b) {
        blocks.push_back(make_ressb_weights(s, "dec" + std::to_string(st) + ".block" + std::to_string(b),
                                            C, C * cfg.inner_ratio, N, rng));
      }
      m.decoder_.push_back(std::move(blocks));
    }
    m.final_expand_ = s.add("final_expand", {E, P * P * E}, truncated_normal<T>(P * P * E * E, 0.02, rng));
    m.head_.weight = s.add("head.weight", {E, cfg.lead_count},
                           truncated_normal<T>(E * cfg.lead_count, 0.02, rng));
    m.head_.bias = s.add("head.bias", {cfg.lead_count}, std::vector<T>(cfg.lead_count, T(0)));
    return m;
  }

  IceMamba(IceMamba&&) noexcept = default;
  IceMamba& operator=(IceMamba&&) noexcept = default;
  IceMamba(const IceMamba&) = delete;
  IceMamba& operator=(const IceMamba&) = delete;

  /// Independent copy with identical parameter values.
  IceMamba clone() const {
    IceMamba m = build(cfg_, 0);
    m.params_.restore(params_.snapshot());
    m.params_.set_step(params_.step());
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// [C_in, H, W] -> [k, H, W] head activations in (-1, 1).
  Tensor<T> forward(const Tensor<T>& input) const {
    if (input.rank() != 3 || input.dim(0) != cfg_.input_channels) {
      throw ShapeError("IceMamba: input " + to_string(input.shape()) + " does not have " +
                       std::to_string(cfg_.input_channels) + " channels");
    }
    const std::size_t H = input.dim(1), W = input.dim(2);
    const std::size_t m = cfg_.spatial_multiple();
    const std::size_t H2 = (H + m - 1) / m * m, W2 = (W + m - 1) / m * m;
    auto f = patch_embed(H2 == H && W2 == W ? input : pad2d(input, H2, W2), embed_, cfg_.patch_size);
    const std::size_t S = cfg_.stages();
    std::vector<Tensor<T>> skips;
    for (std::size_t st = 0; st < S; ++st) {
      for (const auto& block : encoder_[st]) f = ressb_forward(f, block);
      if (st + 1 < S) {
        skips.push_back(f);
        f = patch_rescale(f, merges_[st], Rescale::merge);
      }
    }
    for (std::size_t i = 0; i + 1 < S; ++i) {
      f = patch_rescale(f, expands_[i], Rescale::expand);
      f = add(f, skips[S - 2 - i]);
      for (const auto& block : decoder_[i]) f = ressb_forward(f, block);
    }
    f = patch_rescale(f, final_expand_, Rescale::final_expand, cfg_.patch_size);
    auto out = output_head(f, head_);
    return H2 == H && W2 == W ? out : crop2d(out, H, W);
  }

  /// Inference without recording history; returns raw head output [k, H, W].
  std::vector<float> predict(const InputStack& stack) const {
    NoGradGuard guard;
    std::vector<T> values(stack.values.begin(), stack.values.end());
    const auto out = forward(Tensor<T>::from({stack.channels, stack.height, stack.width}, std::move(values)));
    return std::vector<float>(out.values().begin(), out.values().end());
  }

 private:
  IceMamba() = default;

  ModelConfig cfg_;
  ParamStore<T> params_;
  PatchEmbedWeights<T> embed_;
  std::vector<std::vector<RessbWeights<T>>> encoder_;
  std::vector<Tensor<T>> merges_;
  std::vector<Tensor<T>> expands_;                      // deepest first
  std::vector<std::vector<RessbWeights<T>>> decoder_;   // deepest first
  Tensor<T> final_expand_;
  OutputHeadWeights<T> head_;
};

/// Anything that maps an input stack to raw [k, H, W] head output.
template <class M>
concept Forecaster = requires(const M& m, const InputStack& s) {
  { m.config() } -> std::convertible_to<const ModelConfig&>;
  { m.predict(s) } -> std::convertible_to<std::vector<float>>;
};

/// Head output mapped to SIC: clamped to [0, 1], land cells forced to 0.
template <Forecaster M>
ForecastSet forecast_direct(const M& model, const InputStack& sample, const Mask& land, Month init) {
  const auto& cfg = model.config();
  if (sample.channels != cfg.input_channels) {
    throw ShapeError("forecast_direct: sample has " + std::to_string(sample.channels) +
                     " channels, model expects " + std::to_string(cfg.input_channels));
  }
  const std::size_t hw = sample.height * sample.width;
  if (land.size() != hw) throw ShapeError("forecast_direct: land mask does not cover the grid");
  auto raw = model.predict(sample);
  if (raw.size() != cfg.lead_count * hw) throw ShapeError("forecast_direct: model output has wrong size");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) {
      throw NumericError("forecast_direct: non-finite activation at output index " + std::to_string(i));
    }
    raw[i] = land[i % hw] ? 0.0f : std::clamp(raw[i], 0.0f, 1.0f);
  }
  return {init, cfg.lead_count, sample.height, sample.width, std::move(raw)};
}

/// Recurrent forecasting with a one-lead SIC-only model: each prediction
/// becomes the newest lag of the next input. `history` holds the 12 SIC
/// lags, lag 1 (most recent) first.
template <Forecaster M>
ForecastSet forecast_autoregressive(const M& model, const InputStack& history, const Mask& land,
                                    Month init, std::size_t horizon) {
  const auto& cfg = model.config();
  if (cfg.lead_count != 1) throw ContractError("forecast_autoregressive: model must predict one lead");
  if (cfg.input_channels != kSicLags) {
    throw ContractError("forecast_autoregressive: model uses " + std::to_string(cfg.input_channels) +
                        " input channels; only SIC-only (12-channel) models can feed themselves");
  }
  if (horizon == 0) throw ContractError("forecast_autoregressive: horizon must be at least 1");
  const std::size_t hw = history.height * history.width;
  ForecastSet out{init, horizon, history.height, history.width, std::vector<float>(horizon * hw)};
  InputStack window = history;
  for (std::size_t step = 0; step < horizon; ++step) {
    const auto one = forecast_direct(model, window, land, init.plus(static_cast<long>(step)));
    std::copy(one.maps.begin(), one.maps.end(), out.maps.begin() + static_cast<long>(step * hw));
    std::copy_backward(window.values.begin(), window.values.end() - static_cast<long>(hw),
                       window.values.end());
    std::copy(one.maps.begin(), one.maps.end(), window.values.begin());
  }
  return out;
}

}  // namespace icemamba
