#pragma once

#include <cmath>
#include <random>
#include <string>

#include "icemamba/vssb.hpp"

namespace icemamba {

/// ECA kernel length for C channels: |log2(C)/2 + 1/2| truncated, bumped to odd.
inline std::size_t eca_kernel_size(std::size_t channels) {
  if (channels == 0) throw ContractError("eca_kernel_size: channels must be positive");
  const double t = std::abs(std::log2(static_cast<double>(channels)) / 2.0 + 0.5);
  const auto k = static_cast<std::size_t>(t);
  return k % 2 == 1 ? k : k + 1;
}

template <class T>
struct EcaWeights {
  Tensor<T> kernel;  // [k], k odd
};

template <class T>
struct RessbWeights {
  EcaWeights<T> eca;
  VssbWeights<T> vssb1;
  VssbWeights<T> vssb2;
  Tensor<T> residual_weight;  // [C, C] 1x1 convolution
  Tensor<T> residual_bias;    // [C]
};

template <class T>
EcaWeights<T> make_eca_weights(ParamStore<T>& store, const std::string& prefix,
                               std::size_t channels, std::mt19937_64& rng) {
  const std::size_t k = eca_kernel_size(channels);
  return {store.add(prefix + ".kernel", {k},
                    uniform_values<T>(k, 1.0 / std::sqrt(static_cast<double>(k)), rng))};
}

template <class T>
RessbWeights<T> make_ressb_weights(ParamStore<T>& store, const std::string& prefix,
                                   std::size_t channels, std::size_t inner, std::size_t state,
                                   std::mt19937_64& rng) {
  RessbWeights<T> w;
  w.eca = make_eca_weights(store, prefix + ".eca", channels, rng);
  w.vssb1 = make_vssb_weights(store, prefix + ".vssb1", channels, inner, state, rng);
  w.vssb2 = make_vssb_weights(store, prefix + ".vssb2", channels, inner, state, rng);
  w.residual_weight = store.add(prefix + ".residual.weight", {channels, channels},
                                truncated_normal<T>(channels * channels, 0.02, rng));
  w.residual_bias = store.add(prefix + ".residual.bias", {channels}, std::vector<T>(channels, T(0)));
  return w;
}

/// Efficient channel attention: sigmoid(conv1d(GAP(x))) scales each channel.
template <class T>
Tensor<T> eca_forward(const Tensor<T>& x, const EcaWeights<T>& w) {
  if (x.rank() != 3) throw ShapeError("eca_forward: expected [C,H,W], got " + to_string(x.shape()));
  if (w.kernel.size() > 2 * x.dim(0) - 1) {
    throw ShapeError("eca_forward: kernel of length " + std::to_string(w.kernel.size()) +
                     " is longer than 2C-1 for C=" + std::to_string(x.dim(0)));
  }
  const auto weights = sigmoid(conv1d_same(global_average_pool(x), w.kernel));
  return scale_channels(x, weights);
}

/// F_E = VSSB(VSSB(ECA(F))); F_C = SiLU(Conv1x1(F)); out = F_E + F_C.
template <class T>
Tensor<T> ressb_forward(const Tensor<T>& x, const RessbWeights<T>& w) {
  const auto enhanced = vssb_forward(vssb_forward(eca_forward(x, w.eca), w.vssb1), w.vssb2);
  const auto residual = silu(linear(x, w.residual_weight, w.residual_bias, Axis::first));
  return add(enhanced, residual);
}

template <class T>
struct PatchEmbedWeights {
  Tensor<T> weight;  // [C_in * P * P, C_emb]
  Tensor<T> bias;    // [C_emb]
};

/// Non-overlapping P x P patches, flattened and mapped linearly to C_emb.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& x, const PatchEmbedWeights<T>& w, std::size_t patch) {
  if (x.rank() != 3) throw ShapeError("patch_embed: expected [C,H,W], got " + to_string(x.shape()));
  if (patch == 0 || x.dim(1) % patch || x.dim(2) % patch) {
    const std::size_t ph = patch ? (patch - x.dim(1) % patch) % patch : 0;
    const std::size_t pw = patch ? (patch - x.dim(2) % patch) % patch : 0;
    throw ShapeError("patch_embed: extents " + to_string(x.shape()) + " not divisible by patch " +
                     std::to_string(patch) + "; pad by " + std::to_string(ph) + " rows and " +
                     std::to_string(pw) + " columns");
  }
  return linear(space_to_depth(x, patch), w.weight, w.bias, Axis::first);
}

enum class Rescale { merge, expand, final_expand };

/// merge: [C,H,W] -> [2C,H/2,W/2]; expand: [C,H,W] -> [C/2,2H,2W];
/// final_expand: [C,H,W] -> [C,PH,PW]. `weight` is the linear map applied
/// to the channel axis ([4C,2C], [C,2C] or [C,P*P*C] respectively).
template <class T>
Tensor<T> patch_rescale(const Tensor<T>& x, const Tensor<T>& weight, Rescale kind,
                        std::size_t patch = 1) {
  if (x.rank() != 3) throw ShapeError("patch_rescale: expected [C,H,W], got " + to_string(x.shape()));
  switch (kind) {
    case Rescale::merge:
      if (x.dim(1) % 2 || x.dim(2) % 2) {
        throw ShapeError("patch merge: odd spatial extent in " + to_string(x.shape()));
      }
      return linear(space_to_depth(x, 2), weight, {}, Axis::first);
    case Rescale::expand:
      if (x.dim(0) % 2) throw ShapeError("patch expand: odd channel count in " + to_string(x.shape()));
      return depth_to_space(linear(x, weight, {}, Axis::first), 2);
    case Rescale::final_expand:
      return depth_to_space(linear(x, weight, {}, Axis::first), patch);
  }
  throw ContractError("patch_rescale: unknown kind");
}

template <class T>
struct OutputHeadWeights {
  Tensor<T> weight;  // [C, k]
  Tensor<T> bias;    // [k]
};

/// tanh(1x1 conv) producing k lead maps in (-1, 1).
template <class T>
Tensor<T> output_head(const Tensor<T>& x, const OutputHeadWeights<T>& w) {
  return tanh(linear(x, w.weight, w.bias, Axis::first));
}

}  // namespace icemamba
