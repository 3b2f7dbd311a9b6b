#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>

#include "icemamba/param_store.hpp"
#include "icemamba/ssm.hpp"

namespace icemamba {

template <class T>
struct VssbWeights {
  Tensor<T> norm_gamma, norm_beta;          // [C]
  Tensor<T> in_proj;                        // [C, Ci]
  Tensor<T> conv_kernel;                    // [Ci, 3, 3]
  std::array<SsmWeights<T>, 4> directions;  // one per scan order
  Tensor<T> out_norm_gamma, out_norm_beta;  // [Ci]
  Tensor<T> gate_proj;                      // [C, Ci]
  Tensor<T> out_proj;                       // [Ci, C]

  std::size_t channels() const { return norm_gamma.size(); }
  std::size_t inner_channels() const { return in_proj.dim(1); }
};

template <class T>
SsmWeights<T> make_ssm_weights(ParamStore<T>& store, const std::string& prefix,
                               std::size_t channels, std::size_t state, std::mt19937_64& rng) {
  const std::size_t C = channels, N = state;
  const double bound = 1.0 / std::sqrt(static_cast<double>(C));
  SsmWeights<T> w;
  w.delta_weight = store.add(prefix + ".delta_weight", {C, C}, uniform_values<T>(C * C, bound, rng));
  // Step sizes start log-uniform in [1e-3, 1e-1]; the bias is their inverse softplus.
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::vector<T> dt_bias(C);
  for (auto& v : dt_bias) {
    const double dt = std::exp(log_dt(rng));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  w.delta_bias = store.add(prefix + ".delta_bias", {C}, std::move(dt_bias));
  w.b_weight = store.add(prefix + ".b_weight", {C, N}, uniform_values<T>(C * N, bound, rng));
  w.b_bias = store.add(prefix + ".b_bias", {N}, std::vector<T>(N, T(0)));
  w.c_weight = store.add(prefix + ".c_weight", {C, N}, uniform_values<T>(C * N, bound, rng));
  w.c_bias = store.add(prefix + ".c_bias", {N}, std::vector<T>(N, T(0)));
  std::vector<T> a_log(C * N);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) a_log[c * N + n] = static_cast<T>(std::log(double(n + 1)));
  w.a_log = store.add(prefix + ".a_log", {C, N}, std::move(a_log));
  w.d = store.add(prefix + ".d", {C}, std::vector<T>(C, T(1)));
  return w;
}

template <class T>
VssbWeights<T> make_vssb_weights(ParamStore<T>& store, const std::string& prefix,
                                 std::size_t channels, std::size_t inner, std::size_t state,
                                 std::mt19937_64& rng) {
  const std::size_t C = channels, Ci = inner;
  VssbWeights<T> w;
  w.norm_gamma = store.add(prefix + ".norm.gamma", {C}, std::vector<T>(C, T(1)));
  w.norm_beta = store.add(prefix + ".norm.beta", {C}, std::vector<T>(C, T(0)));
  w.in_proj = store.add(prefix + ".in_proj", {C, Ci}, truncated_normal<T>(C * Ci, 0.02, rng));
  w.conv_kernel = store.add(prefix + ".conv", {Ci, 3, 3}, uniform_values<T>(Ci * 9, 1.0 / 3.0, rng));
  for (std::size_t d = 0; d < 4; ++d) {
    w.directions[d] = make_ssm_weights(store, prefix + ".ssm" + std::to_string(d), Ci, state, rng);
  }
  w.out_norm_gamma = store.add(prefix + ".out_norm.gamma", {Ci}, std::vector<T>(Ci, T(1)));
  w.out_norm_beta = store.add(prefix + ".out_norm.beta", {Ci}, std::vector<T>(Ci, T(0)));
  w.gate_proj = store.add(prefix + ".gate_proj", {C, Ci}, truncated_normal<T>(C * Ci, 0.02, rng));
  w.out_proj = store.add(prefix + ".out_proj", {Ci, C}, truncated_normal<T>(Ci * C, 0.02, rng));
  return w;
}

/// 2D selective scan: cross-scan, one selective scan per direction, merge.
template <class T>
Tensor<T> ss2d_forward(const Tensor<T>& x, const std::array<SsmWeights<T>, 4>& directions) {
  auto seqs = cross_scan(x);
  for (std::size_t d = 0; d < 4; ++d) seqs[d] = selective_scan(seqs[d], directions[d]);
  return cross_merge(seqs, x.dim(1), x.dim(2));
}

/// Vision state-space block on a [C, H, W] map:
///   u = LN(x); main = LN(SS2D(SiLU(DWConv(Linear(u))))); gate = SiLU(Linear(u));
///   out = x + Linear(main * gate).
template <class T>
Tensor<T> vssb_forward(const Tensor<T>& x, const VssbWeights<T>& w) {
  if (x.rank() != 3 || x.dim(0) != w.channels()) {
    throw ShapeError("vssb_forward: input " + to_string(x.shape()) + " does not have " +
                     std::to_string(w.channels()) + " channels");
  }
  const T eps = T(1e-5);
  const auto u = layer_norm(x, w.norm_gamma, w.norm_beta, eps, Axis::first);
  auto main = linear(u, w.in_proj, {}, Axis::first);
  main = silu(depthwise_conv2d(main, w.conv_kernel));
  main = ss2d_forward(main, w.directions);
  main = layer_norm(main, w.out_norm_gamma, w.out_norm_beta, eps, Axis::first);
  const auto gate = silu(linear(u, w.gate_proj, {}, Axis::first));
  return add(x, linear(mul(main, gate), w.out_proj, {}, Axis::first));
}

}  // namespace icemamba
