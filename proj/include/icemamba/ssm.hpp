#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "icemamba/ops.hpp"

namespace icemamba {

/// The four traversal orders of the 2D cross-scan. The reversed orders run
/// their forward counterpart from the opposite corner.
enum class ScanOrder { row_major = 0, column_major = 1, row_major_reversed = 2, column_major_reversed = 3 };

inline constexpr std::array<ScanOrder, 4> kScanOrders = {
    ScanOrder::row_major, ScanOrder::column_major, ScanOrder::row_major_reversed,
    ScanOrder::column_major_reversed};

/// Grid position (row * W + col) visited at each step of `order`.
inline std::vector<std::size_t> scan_positions(std::size_t H, std::size_t W, ScanOrder order) {
  const std::size_t L = H * W;
  std::vector<std::size_t> pos(L);
  const bool by_column = order == ScanOrder::column_major || order == ScanOrder::column_major_reversed;
  const bool reversed = order == ScanOrder::row_major_reversed || order == ScanOrder::column_major_reversed;
  for (std::size_t k = 0; k < L; ++k) {
    pos[k] = by_column ? (k % H) * W + k / H : k;
  }
  if (reversed) std::reverse(pos.begin(), pos.end());
  return pos;
}

/// A flattened feature map: x has shape [L, channels].
template <class T>
struct ScanSequence {
  ScanOrder order = ScanOrder::row_major;
  Tensor<T> x;

  std::size_t length() const { return x.dim(0); }
  std::size_t channels() const { return x.dim(1); }
};

/// Zero-order-hold discretization of a diagonal system for one step size:
/// A_bar = exp(delta * A), B_bar = delta * B.
template <class T>
std::pair<std::vector<T>, std::vector<T>> zoh_discretize(std::span<const T> a_diag,
                                                         std::span<const T> b, T delta) {
  if (delta < T(0) || !std::isfinite(delta)) {
    throw ContractError("zoh_discretize: step size must be finite and non-negative");
  }
  std::vector<T> a_bar(a_diag.size()), b_bar(b.size());
  for (std::size_t n = 0; n < a_diag.size(); ++n) a_bar[n] = std::exp(delta * a_diag[n]);
  for (std::size_t n = 0; n < b.size(); ++n) b_bar[n] = delta * b[n];
  return {std::move(a_bar), std::move(b_bar)};
}

/// Continuous selective-SSM parameters for a sequence of `channels` inputs.
/// Row-major layouts: a [channels, state], delta_weight [channels, channels],
/// b_weight/c_weight [channels, state].
template <class T>
struct SsmParams {
  std::size_t channels = 0;
  std::size_t state = 0;
  std::vector<T> a;
  std::vector<T> d;
  std::vector<T> delta_weight;
  std::vector<T> delta_bias;
  std::vector<T> b_weight;
  std::vector<T> b_bias;
  std::vector<T> c_weight;
  std::vector<T> c_bias;

  void validate() const {
    if (state == 0) throw ContractError("SsmParams: state size must be at least 1");
    const std::size_t C = channels, N = state;
    if (a.size() != C * N || d.size() != C || delta_weight.size() != C * C ||
        delta_bias.size() != C || b_weight.size() != C * N || b_bias.size() != N ||
        c_weight.size() != C * N || c_bias.size() != N) {
      throw ShapeError("SsmParams: projection shapes do not match channels=" + std::to_string(C) +
                       ", state=" + std::to_string(N));
    }
    for (T v : a) {
      if (!(v < T(0))) throw ContractError("SsmParams: A entries must be strictly negative");
    }
  }

  bool is_time_invariant() const {
    auto zero = [](const std::vector<T>& v) {
      return std::all_of(v.begin(), v.end(), [](T x) { return x == T(0); });
    };
    return zero(delta_weight) && zero(b_weight) && zero(c_weight);
  }
};

namespace detail {

/// Discretized recurrence over per-step parameters.
///   x, delta, y: [L, C]; a: [C, N]; b, c: [L, N]; d: [C].
/// When `states`/`decay` are given they receive h_k and exp(delta_k * a),
/// both [L, C, N], for the backward pass.
template <class T>
void scan_forward(std::size_t L, std::size_t C, std::size_t N, const T* x, const T* delta,
                  const T* a, const T* b, const T* c, const T* d, T* y, T* states, T* decay) {
  std::vector<T> local;
  if (!decay) {
    local.resize(L * C * N);
    decay = local.data();
  }
  for (std::size_t kc = 0; kc < L * C; ++kc) {
    const T dt = delta[kc];
    const T* ac = a + (kc % C) * N;
    for (std::size_t n = 0; n < N; ++n) decay[kc * N + n] = dt * ac[n];
  }
  // Evaluated in Eigen-owned storage so the vector/scalar split does not
  // depend on the alignment of `decay`.
  using Column = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Column exponent = Eigen::Map<const Column>(decay, static_cast<Eigen::Index>(L * C * N)).exp();
  std::copy(exponent.data(), exponent.data() + exponent.size(), decay);
  std::vector<T> h(C * N, T(0));
  for (std::size_t k = 0; k < L; ++k) {
    const T* bk = b + k * N;
    const T* ck = c + k * N;
    for (std::size_t ch = 0; ch < C; ++ch) {
      const std::size_t kc = k * C + ch;
      const T u = delta[kc] * x[kc];
      const T* da = decay + kc * N;
      T* hc = h.data() + ch * N;
      for (std::size_t n = 0; n < N; ++n) hc[n] = da[n] * hc[n] + u * bk[n];
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) acc += ck[n] * hc[n];
      if (states) std::copy(hc, hc + N, states + kc * N);
      y[kc] = acc + d[ch] * x[kc];
    }
  }
}

}  // namespace detail

/// Recurrent selective scan: h_k = A_bar_k h_{k-1} + B_bar_k x_k,
/// y_k = C_k h_k + D x_k with h_0 = 0 and delta_k, B_k, C_k computed from x_k.
template <class T>
ScanSequence<T> selective_scan(const ScanSequence<T>& seq, const SsmParams<T>& p,
                               std::vector<T>* states_out = nullptr) {
  p.validate();
  if (seq.x.rank() != 2 || seq.channels() != p.channels) {
    throw ShapeError("selective_scan: sequence " + to_string(seq.x.shape()) +
                     " does not match parameters for " + std::to_string(p.channels) + " channels");
  }
  const std::size_t L = seq.length(), C = p.channels, N = p.state;
  const auto x = seq.x.values();
  std::vector<T> delta(L * C), b(L * N), c(L * N);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t j = 0; j < C; ++j) {
      T acc = p.delta_bias[j];
      for (std::size_t i = 0; i < C; ++i) acc += x[k * C + i] * p.delta_weight[i * C + j];
      delta[k * C + j] = activate(acc, Activation::softplus);
    }
    for (std::size_t n = 0; n < N; ++n) {
      T bb = p.b_bias[n], cc = p.c_bias[n];
      for (std::size_t i = 0; i < C; ++i) {
        bb += x[k * C + i] * p.b_weight[i * N + n];
        cc += x[k * C + i] * p.c_weight[i * N + n];
      }
      b[k * N + n] = bb;
      c[k * N + n] = cc;
    }
  }
  std::vector<T> y(L * C);
  if (states_out) states_out->assign(L * C * N, T(0));
  detail::scan_forward(L, C, N, x.data(), delta.data(), p.a.data(), b.data(), c.data(),
                       p.d.data(), y.data(), states_out ? states_out->data() : nullptr,
                       static_cast<T*>(nullptr));
  return {seq.order, Tensor<T>::from({L, C}, std::move(y))};
}

/// Fixed (time-invariant) discretized single-channel system.
template <class T>
struct DiscreteSsm {
  std::vector<T> a_bar;
  std::vector<T> b_bar;
  std::vector<T> c;
  T d = T(0);
};

template <class T>
std::vector<T> lti_recurrent_scan(std::span<const T> x, const DiscreteSsm<T>& s) {
  const std::size_t N = s.a_bar.size();
  std::vector<T> h(N, T(0)), y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    T acc = T(0);
    for (std::size_t n = 0; n < N; ++n) {
      h[n] = s.a_bar[n] * h[n] + s.b_bar[n] * x[k];
      acc += s.c[n] * h[n];
    }
    y[k] = acc + s.d * x[k];
  }
  return y;
}

/// Kernel K[j] = sum_n c_n a_bar_n^j b_bar_n for j < L.
template <class T>
std::vector<T> lti_kernel(const DiscreteSsm<T>& s, std::size_t L) {
  const std::size_t N = s.a_bar.size();
  std::vector<T> power(N, T(1)), kernel(L, T(0));
  for (std::size_t j = 0; j < L; ++j) {
    T acc = T(0);
    for (std::size_t n = 0; n < N; ++n) {
      acc += s.c[n] * power[n] * s.b_bar[n];
      power[n] *= s.a_bar[n];
    }
    kernel[j] = acc;
  }
  return kernel;
}

/// Convolutional form: y = causal_conv(x, K) + d x.
template <class T>
std::vector<T> lti_conv_scan(std::span<const T> x, const DiscreteSsm<T>& s) {
  if (s.b_bar.size() != s.a_bar.size() || s.c.size() != s.a_bar.size()) {
    throw ShapeError("lti_conv_scan: A_bar, B_bar and C must share the state size");
  }
  const auto kernel = lti_kernel(s, x.size());
  std::vector<T> y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    T acc = T(0);
    for (std::size_t j = 0; j <= k; ++j) acc += kernel[j] * x[k - j];
    y[k] = acc + s.d * x[k];
  }
  return y;
}

/// Convolutional evaluation of a time-invariant parameter set. Input
/// dependence (any nonzero projection weight) violates the contract.
template <class T>
ScanSequence<T> lti_conv_scan(const ScanSequence<T>& seq, const SsmParams<T>& p) {
  p.validate();
  if (!p.is_time_invariant()) {
    throw ContractError("lti_conv_scan: parameters depend on the input; use selective_scan");
  }
  if (seq.x.rank() != 2 || seq.channels() != p.channels) {
    throw ShapeError("lti_conv_scan: sequence " + to_string(seq.x.shape()) +
                     " does not match parameters");
  }
  const std::size_t L = seq.length(), C = p.channels, N = p.state;
  std::vector<T> y(L * C), column(L);
  for (std::size_t ch = 0; ch < C; ++ch) {
    const T dt = activate(p.delta_bias[ch], Activation::softplus);
    auto [a_bar, b_bar] = zoh_discretize<T>(std::span(p.a).subspan(ch * N, N), p.b_bias, dt);
    DiscreteSsm<T> s{std::move(a_bar), std::move(b_bar), p.c_bias, p.d[ch]};
    for (std::size_t k = 0; k < L; ++k) column[k] = seq.x[k * C + ch];
    const auto out = lti_conv_scan<T>(column, s);
    for (std::size_t k = 0; k < L; ++k) y[k * C + ch] = out[k];
  }
  return {seq.order, Tensor<T>::from({L, C}, std::move(y))};
}

/// Differentiable core of the selective scan over already-projected inputs:
/// x, delta [L, C]; a [C, N]; b, c [L, N]; d [C]. Returns y [L, C].
template <class T>
Tensor<T> selective_scan_op(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                            const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d) {
  if (x.rank() != 2 || a.rank() != 2) throw ShapeError("selective_scan_op: expected [L,C] and [C,N]");
  const std::size_t L = x.dim(0), C = x.dim(1), N = a.dim(1);
  if (delta.shape() != x.shape() || a.dim(0) != C || b.shape() != Shape{L, N} ||
      c.shape() != Shape{L, N} || d.shape() != Shape{C}) {
    throw ShapeError("selective_scan_op: inconsistent shapes x" + to_string(x.shape()) + " delta" +
                     to_string(delta.shape()) + " A" + to_string(a.shape()) + " B" +
                     to_string(b.shape()) + " C" + to_string(c.shape()) + " D" +
                     to_string(d.shape()));
  }
  const bool record = grad_enabled() && (x.requires_grad() || delta.requires_grad() ||
                                         a.requires_grad() || b.requires_grad() ||
                                         c.requires_grad() || d.requires_grad());
  std::vector<T> y(L * C);
  std::vector<T> states, decay;
  if (record) {
    states.resize(L * C * N);
    decay.resize(L * C * N);
  }
  detail::scan_forward(L, C, N, x.values().data(), delta.values().data(), a.values().data(),
                       b.values().data(), c.values().data(), d.values().data(), y.data(),
                       record ? states.data() : nullptr, record ? decay.data() : nullptr);
  return make_result<T>({L, C}, std::move(y), {x, delta, a, b, c, d}, "selective_scan",
                        [L, C, N, states = std::move(states), decay = std::move(decay)](Node<T>& self) {
    auto grad_of = [](Node<T>& n) -> T* { return n.requires_grad ? n.grad_buffer().data() : nullptr; };
    Node<T>& px = *self.parents[0];
    Node<T>& pdt = *self.parents[1];
    Node<T>& pa = *self.parents[2];
    Node<T>& pb = *self.parents[3];
    Node<T>& pc = *self.parents[4];
    Node<T>& pd = *self.parents[5];
    T* gx = grad_of(px);
    T* gdt = grad_of(pdt);
    T* ga = grad_of(pa);
    T* gb = grad_of(pb);
    T* gc = grad_of(pc);
    T* gd = grad_of(pd);
    const T* xv = px.value.data();
    const T* dtv = pdt.value.data();
    const T* av = pa.value.data();
    const T* bv = pb.value.data();
    const T* cv = pc.value.data();
    const T* dv = pd.value.data();
    const T* gy = self.grad.data();
    std::vector<T> gh(C * N, T(0)), zero(N, T(0)), gdecay(N), g(N);
    for (std::size_t kk = L; kk-- > 0;) {
      const T* bk = bv + kk * N;
      const T* ck = cv + kk * N;
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t kc = kk * C + ch;
        const T g_out = gy[kc];
        const T dt = dtv[kc];
        const T xk = xv[kc];
        const T* hk = states.data() + kc * N;
        const T* hprev = kk > 0 ? states.data() + ((kk - 1) * C + ch) * N : zero.data();
        const T* dak = decay.data() + kc * N;
        const T* ac = av + ch * N;
        T* ghc = gh.data() + ch * N;
        if (gd) gd[ch] += g_out * xk;
        if (gc) for (std::size_t n = 0; n < N; ++n) gc[kk * N + n] += g_out * hk[n];
        for (std::size_t n = 0; n < N; ++n) {
          g[n] = ghc[n] + ck[n] * g_out;
          gdecay[n] = g[n] * hprev[n] * dak[n];
          ghc[n] = g[n] * dak[n];
        }
        if (ga) for (std::size_t n = 0; n < N; ++n) ga[ch * N + n] += gdecay[n] * dt;
        if (gb) for (std::size_t n = 0; n < N; ++n) gb[kk * N + n] += g[n] * dt * xk;
        T g_dt = T(0), g_u = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          g_dt += gdecay[n] * ac[n];
          g_u += g[n] * bk[n];
        }
        if (gdt) gdt[kc] += g_dt + g_u * xk;
        if (gx) gx[kc] += g_u * dt + g_out * dv[ch];
      }
    }
  });
}

/// Trainable parameters of one scan direction. A is parameterized as
/// -exp(a_log) so it stays strictly negative under any update.
template <class T>
struct SsmWeights {
  Tensor<T> delta_weight;  // [C, C]
  Tensor<T> delta_bias;    // [C]
  Tensor<T> b_weight;      // [C, N]
  Tensor<T> b_bias;        // [N]
  Tensor<T> c_weight;      // [C, N]
  Tensor<T> c_bias;        // [N]
  Tensor<T> a_log;         // [C, N]
  Tensor<T> d;             // [C]

  SsmParams<T> to_params() const {
    SsmParams<T> p;
    p.channels = d.size();
    p.state = b_bias.size();
    auto vec = [](const Tensor<T>& t) { return std::vector<T>(t.values().begin(), t.values().end()); };
    p.a = vec(a_log);
    for (auto& v : p.a) v = -std::exp(v);
    p.d = vec(d);
    p.delta_weight = vec(delta_weight);
    p.delta_bias = vec(delta_bias);
    p.b_weight = vec(b_weight);
    p.b_bias = vec(b_bias);
    p.c_weight = vec(c_weight);
    p.c_bias = vec(c_bias);
    return p;
  }
};

/// Differentiable selective scan of one sequence.
template <class T>
ScanSequence<T> selective_scan(const ScanSequence<T>& seq, const SsmWeights<T>& w) {
  const Tensor<T> delta = softplus(linear(seq.x, w.delta_weight, w.delta_bias));
  const Tensor<T> b = linear(seq.x, w.b_weight, w.b_bias);
  const Tensor<T> c = linear(seq.x, w.c_weight, w.c_bias);
  const Tensor<T> a = scale(exp(w.a_log), T(-1));
  return {seq.order, selective_scan_op(seq.x, delta, a, b, c, w.d)};
}

/// [C, H, W] -> four [H*W, C] sequences in kScanOrders order.
template <class T>
std::array<ScanSequence<T>, 4> cross_scan(const Tensor<T>& feature) {
  if (feature.rank() != 3 || feature.dim(1) == 0 || feature.dim(2) == 0) {
    throw ShapeError("cross_scan: expected nonempty [C,H,W], got " + to_string(feature.shape()));
  }
  const std::size_t C = feature.dim(0), H = feature.dim(1), W = feature.dim(2), L = H * W;
  std::array<ScanSequence<T>, 4> out;
  for (std::size_t dir = 0; dir < 4; ++dir) {
    const auto pos = scan_positions(H, W, kScanOrders[dir]);
    std::vector<std::size_t> idx(L * C);
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t c = 0; c < C; ++c) idx[k * C + c] = c * L + pos[k];
    out[dir] = {kScanOrders[dir], gather(feature, std::move(idx), {L, C}, "cross_scan")};
  }
  return out;
}

/// Returns each sequence to grid order and sums them in direction order.
template <class T>
Tensor<T> cross_merge(const std::array<ScanSequence<T>, 4>& seqs, std::size_t H, std::size_t W) {
  const std::size_t L = H * W;
  Tensor<T> total;
  for (const auto& seq : seqs) {
    if (seq.x.rank() != 2 || seq.length() != L) {
      throw ShapeError("cross_merge: sequence " + to_string(seq.x.shape()) +
                       " does not have length H*W=" + std::to_string(L));
    }
    const std::size_t C = seq.channels();
    const auto pos = scan_positions(H, W, seq.order);
    std::vector<std::size_t> idx(L * C);
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t c = 0; c < C; ++c) idx[c * L + pos[k]] = k * C + c;
    auto grid = gather(seq.x, std::move(idx), {C, H, W}, "cross_merge");
    total = total.defined() ? add(total, grid) : grid;
  }
  return total;
}

}  // namespace icemamba
