#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icemamba/tensor.hpp"

namespace icemamba {

enum class Activation { silu, tanh, sigmoid, softplus };

/// Which axis of a tensor holds channels: the trailing one ([..., C]) or the
/// leading one ([C, H, W] feature maps).
enum class Axis { last, first };

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus_scalar(T x) {
  if (x > T(30)) return x;
  return std::log1p(std::exp(x));
}

struct ChannelLayout {
  std::size_t outer;
  std::size_t channels;
  std::size_t inner;
};

inline ChannelLayout channel_layout(const Shape& shape, Axis axis, const char* op) {
  if (shape.empty()) throw ShapeError(std::string(op) + ": rank-0 input");
  const std::size_t total = numel(shape);
  if (axis == Axis::last) {
    const std::size_t c = shape.back();
    return {c ? total / c : 0, c, 1};
  }
  const std::size_t c = shape.front();
  return {1, c, c ? total / c : 0};
}

}  // namespace detail

template <class T>
T activate(T x, Activation kind) {
  switch (kind) {
    case Activation::silu: return x * detail::sigmoid_scalar(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return detail::sigmoid_scalar(x);
    case Activation::softplus: return detail::softplus_scalar(x);
  }
  return x;
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  const auto in = x.values();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!std::isfinite(in[i])) {
      throw NumericError("activation: non-finite input at index " + std::to_string(i));
    }
    out[i] = activate(in[i], kind);
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "activation", [kind](Node<T>& self) {
    auto& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    auto gx = parent.grad_buffer();
    const auto& xv = parent.value;
    const auto& yv = self.value;
    const auto& gy = self.grad;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      T d;
      switch (kind) {
        case Activation::silu: {
          const T s = detail::sigmoid_scalar(xv[i]);
          d = s * (T(1) + xv[i] * (T(1) - s));
          break;
        }
        case Activation::tanh: d = T(1) - yv[i] * yv[i]; break;
        case Activation::sigmoid: d = yv[i] * (T(1) - yv[i]); break;
        case Activation::softplus: d = detail::sigmoid_scalar(xv[i]); break;
        default: d = T(1);
      }
      gx[i] += gy[i] * d;
    }
  });
}

template <class T> Tensor<T> silu(const Tensor<T>& x) { return activation(x, Activation::silu); }
template <class T> Tensor<T> tanh(const Tensor<T>& x) { return activation(x, Activation::tanh); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }
template <class T> Tensor<T> softplus(const Tensor<T>& x) { return activation(x, Activation::softplus); }

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  const auto in = x.values();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, "exp", [](Node<T>& self) {
    auto gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * self.value[i];
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "sub", [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  return make_result<T>(a.shape(), std::move(out), {a}, "scale", [s](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return make_result<T>({1}, {total}, {a}, "sum", [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// out[..., j] = sum_i x[..., i] W[i, j] + b[j] along the channel axis.
/// With Axis::first this is a 1x1 convolution over a [C, H, W] map.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {},
                 Axis axis = Axis::last) {
  const auto lay = detail::channel_layout(x.shape(), axis, "linear");
  if (w.rank() != 2 || w.dim(0) != lay.channels) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  const std::size_t cin = lay.channels;
  const std::size_t cout = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
    throw ShapeError("linear: bias " + to_string(b.shape()) + " does not match output width " +
                     std::to_string(cout));
  }
  Shape out_shape = x.shape();
  if (axis == Axis::last) out_shape.back() = cout; else out_shape.front() = cout;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  // Vectorized kernels pick their summation order from pointer alignment, so
  // operands are copied into Eigen-owned storage to keep results reproducible.
  auto own = [](std::span<const T> v, std::size_t r, std::size_t c) -> Mat { return CMap(v.data(), r, c); };
  const bool rows = axis == Axis::last;  // x is [outer, cin] or [cin, inner]
  const std::size_t n = rows ? lay.outer : lay.inner;
  const Mat wm = own(w.values(), cin, cout);
  Mat y;
  if (rows) {
    y.noalias() = own(x.values(), n, cin) * wm;
    if (b.defined()) y.rowwise() += own(b.values(), 1, cout).row(0);
  } else {
    y.noalias() = wm.transpose() * own(x.values(), cin, n);
    if (b.defined()) y.colwise() += own(b.values(), cout, 1).col(0);
  }
  std::vector<T> out(y.data(), y.data() + y.size());
  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result<T>(std::move(out_shape), std::move(out), inputs, "linear",
                        [rows, n, cin, cout, own](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    auto accumulate = [](Node<T>& node, const Mat& g) {
      const auto buf = node.grad_buffer();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g.data()[i];
    };
    const Mat wm = own(pw.value, cin, cout);
    if (rows) {
      const Mat gy = own(self.grad, n, cout);
      if (px.requires_grad) accumulate(px, gy * wm.transpose());
      if (pw.requires_grad) accumulate(pw, own(px.value, n, cin).transpose() * gy);
      if (pb && pb->requires_grad) accumulate(*pb, gy.colwise().sum());
    } else {
      const Mat gy = own(self.grad, cout, n);
      if (px.requires_grad) accumulate(px, wm * gy);
      if (pw.requires_grad) accumulate(pw, own(px.value, cin, n) * gy.transpose());
      if (pb && pb->requires_grad) accumulate(*pb, gy.rowwise().sum());
    }
  });
}

/// Per-channel 2D convolution with zero "same" padding; kernel extents odd.
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k) {
  if (x.rank() != 3 || k.rank() != 3 || k.dim(0) != x.dim(0)) {
    throw ShapeError("depthwise_conv2d: input " + to_string(x.shape()) + " and kernel " +
                     to_string(k.shape()) + " are incompatible");
  }
  const std::size_t kh = k.dim(1), kw = k.dim(2);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("depthwise_conv2d: kernel extents must be odd, got " + to_string(k.shape()));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  std::vector<T> out(C * H * W, T(0));
  const T* xv = x.values().data();
  const T* kv = k.values().data();
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t dy = 0; dy < kh; ++dy) {
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const long oy = static_cast<long>(dy) - ph;
          const long ox = static_cast<long>(dx) - pw;
          const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -ox));
          const std::size_t x1 = static_cast<std::size_t>(std::min<long>(W, static_cast<long>(W) - ox));
          for (std::size_t y = 0; y < H; ++y) {
            const long sy = static_cast<long>(y) + oy;
            if (sy < 0 || sy >= static_cast<long>(H)) continue;
            body(c, (c * kh + dy) * kw + dx, c * H * W + y * W,
                 c * H * W + static_cast<std::size_t>(sy) * W, x0, x1, ox);
          }
        }
      }
    }
  };
  for_each_tap([&](std::size_t, std::size_t ki, std::size_t orow, std::size_t irow,
                   std::size_t x0, std::size_t x1, long ox) {
    const T kval = kv[ki];
    for (std::size_t xx = x0; xx < x1; ++xx) {
      out[orow + xx] += kval * xv[irow + static_cast<std::size_t>(static_cast<long>(xx) + ox)];
    }
  });
  return make_result<T>(x.shape(), std::move(out), {x, k}, "depthwise_conv2d",
                        [for_each_tap](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pk = *self.parents[1];
    T* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
    T* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
    const T* gy = self.grad.data();
    const T* xv = px.value.data();
    const T* kv = pk.value.data();
    for_each_tap([&](std::size_t, std::size_t ki, std::size_t orow, std::size_t irow,
                     std::size_t x0, std::size_t x1, long ox) {
      T acc = T(0);
      for (std::size_t xx = x0; xx < x1; ++xx) {
        const std::size_t src = irow + static_cast<std::size_t>(static_cast<long>(xx) + ox);
        if (gx) gx[src] += kv[ki] * gy[orow + xx];
        acc += xv[src] * gy[orow + xx];
      }
      if (gk) gk[ki] += acc;
    });
  });
}

/// Normalizes over the channel axis, then applies gamma/beta per channel.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5), Axis axis = Axis::last) {
  const auto lay = detail::channel_layout(x.shape(), axis, "layer_norm");
  if (lay.channels == 0) throw ShapeError("layer_norm: zero channels");
  if (gamma.shape() != Shape{lay.channels} || beta.shape() != Shape{lay.channels}) {
    throw ShapeError("layer_norm: affine parameters " + to_string(gamma.shape()) + "/" +
                     to_string(beta.shape()) + " do not match channels of " +
                     to_string(x.shape()));
  }
  const std::size_t C = lay.channels, inner = lay.inner;
  const std::size_t groups = lay.outer * inner;
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(groups);
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  const T* g = gamma.values().data();
  const T* bt = beta.values().data();
  for (std::size_t o = 0; o < lay.outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * C * inner + q;
      T m = T(0);
      for (std::size_t i = 0; i < C; ++i) m += xv[base + i * inner];
      m /= static_cast<T>(C);
      T var = T(0);
      for (std::size_t i = 0; i < C; ++i) {
        const T d = xv[base + i * inner] - m;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T r = T(1) / std::sqrt(var + eps);
      rstd[o * inner + q] = r;
      for (std::size_t i = 0; i < C; ++i) {
        const std::size_t idx = base + i * inner;
        xhat[idx] = (xv[idx] - m) * r;
        out[idx] = xhat[idx] * g[i] + bt[i];
      }
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                        [lay, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const std::size_t C = lay.channels, inner = lay.inner;
    T* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
    T* gg = pg.requires_grad ? pg.grad_buffer().data() : nullptr;
    T* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    const T* gy = self.grad.data();
    const T* g = pg.value.data();
    for (std::size_t o = 0; o < lay.outer; ++o) {
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * C * inner + q;
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t i = 0; i < C; ++i) {
          const std::size_t idx = base + i * inner;
          const T d = gy[idx] * g[i];
          mean_d += d;
          mean_dx += d * xhat[idx];
          if (gg) gg[i] += gy[idx] * xhat[idx];
          if (gb) gb[i] += gy[idx];
        }
        if (!gx) continue;
        mean_d /= static_cast<T>(C);
        mean_dx /= static_cast<T>(C);
        const T r = rstd[o * inner + q];
        for (std::size_t i = 0; i < C; ++i) {
          const std::size_t idx = base + i * inner;
          gx[idx] += r * (gy[idx] * g[i] - mean_d - xhat[idx] * mean_dx);
        }
      }
    }
  });
}

/// [C, H, W] -> [C], mean over the spatial extent.
template <class T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(1) == 0 || x.dim(2) == 0) {
    throw ShapeError("global_average_pool: expected nonempty [C,H,W], got " + to_string(x.shape()));
  }
  const std::size_t C = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<T> out(C, T(0));
  const T* xv = x.values().data();
  for (std::size_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += xv[c * hw + i];
    out[c] = acc / static_cast<T>(hw);
  }
  return make_result<T>({C}, std::move(out), {x}, "global_average_pool", [C, hw](Node<T>& self) {
    auto gx = self.parents[0]->grad_buffer();
    for (std::size_t c = 0; c < C; ++c) {
      const T g = self.grad[c] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[c * hw + i] += g;
    }
  });
}

/// 1D convolution of a vector with an odd kernel, zero padding (k-1)/2.
template <class T>
Tensor<T> conv1d_same(const Tensor<T>& v, const Tensor<T>& kernel) {
  if (v.rank() != 1 || kernel.rank() != 1 || kernel.dim(0) % 2 == 0) {
    throw ShapeError("conv1d_same: expected vector input and odd kernel, got " +
                     to_string(v.shape()) + " and " + to_string(kernel.shape()));
  }
  const long n = static_cast<long>(v.dim(0));
  const long k = static_cast<long>(kernel.dim(0));
  const long pad = (k - 1) / 2;
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  for (long c = 0; c < n; ++c) {
    for (long j = 0; j < k; ++j) {
      const long s = c + j - pad;
      if (s >= 0 && s < n) out[c] += kernel[j] * v[s];
    }
  }
  return make_result<T>(v.shape(), std::move(out), {v, kernel}, "conv1d_same",
                        [n, k, pad](Node<T>& self) {
    auto& pv = *self.parents[0];
    auto& pk = *self.parents[1];
    T* gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
    T* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
    for (long c = 0; c < n; ++c) {
      for (long j = 0; j < k; ++j) {
        const long s = c + j - pad;
        if (s < 0 || s >= n) continue;
        if (gv) gv[s] += pk.value[j] * self.grad[c];
        if (gk) gk[j] += pv.value[s] * self.grad[c];
      }
    }
  });
}

/// x[C, ...] scaled by w[c] on each leading-axis slice.
template <class T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() < 1 || w.shape() != Shape{x.dim(0)}) {
    throw ShapeError("scale_channels: weights " + to_string(w.shape()) + " vs input " +
                     to_string(x.shape()));
  }
  const std::size_t C = x.dim(0), inner = x.size() / std::max<std::size_t>(C, 1);
  std::vector<T> out(x.size());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] = x[c * inner + i] * w[c];
  }
  return make_result<T>(x.shape(), std::move(out), {x, w}, "scale_channels",
                        [C, inner](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    T* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
    T* gw = pw.requires_grad ? pw.grad_buffer().data() : nullptr;
    for (std::size_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = c * inner + i;
        if (gx) gx[idx] += self.grad[idx] * pw.value[c];
        acc += self.grad[idx] * px.value[idx];
      }
      if (gw) gw[c] += acc;
    }
  });
}

/// Sentinel index for `gather`: the output element is zero.
inline constexpr std::size_t kZeroIndex = std::numeric_limits<std::size_t>::max();

/// out[i] = x[index[i]] (or 0 for kZeroIndex). The backward pass scatter-adds,
/// so repeated indices accumulate.
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape out_shape,
                 const char* op = "gather") {
  if (numel(out_shape) != index.size()) {
    throw ShapeError(std::string(op) + ": index count does not match shape " +
                     to_string(out_shape));
  }
  std::vector<T> out(index.size());
  const T* xv = x.values().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    out[i] = index[i] == kZeroIndex ? T(0) : xv[index[i]];
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, op,
                        [index = std::move(index)](Node<T>& self) {
    auto gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] != kZeroIndex) gx[index[i]] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + to_string(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1);
  std::vector<std::size_t> idx(a * b);
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t i = 0; i < a; ++i) idx[j * a + i] = i * b + j;
  return gather(x, std::move(idx), {b, a}, "transpose2d");
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(x, std::move(idx), std::move(shape), "reshape");
}

/// [C, H, W] -> [C*p*p, H/p, W/p]; output channel c*p*p + dy*p + dx holds
/// offset (dy, dx) of each p x p block.
template <class T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t p) {
  if (x.rank() != 3 || p == 0 || x.dim(1) % p || x.dim(2) % p) {
    throw ShapeError("space_to_depth: extents of " + to_string(x.shape()) +
                     " are not divisible by block " + std::to_string(p));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t h = H / p, w = W / p;
  std::vector<std::size_t> idx(x.size());
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < p; ++dy)
      for (std::size_t dx = 0; dx < p; ++dx)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx)
            idx[n++] = c * H * W + (y * p + dy) * W + xx * p + dx;
  return gather(x, std::move(idx), {C * p * p, h, w}, "space_to_depth");
}

/// Inverse of space_to_depth: [C*p*p, h, w] -> [C, h*p, w*p].
template <class T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t p) {
  if (x.rank() != 3 || p == 0 || x.dim(0) % (p * p)) {
    throw ShapeError("depth_to_space: channels of " + to_string(x.shape()) +
                     " are not divisible by " + std::to_string(p * p));
  }
  const std::size_t C = x.dim(0) / (p * p), h = x.dim(1), w = x.dim(2);
  const std::size_t H = h * p, W = w * p;
  std::vector<std::size_t> idx(x.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t Y = 0; Y < H; ++Y)
      for (std::size_t X = 0; X < W; ++X) {
        const std::size_t src_c = c * p * p + (Y % p) * p + (X % p);
        idx[(c * H + Y) * W + X] = (src_c * h + Y / p) * w + X / p;
      }
  return gather(x, std::move(idx), {C, H, W}, "depth_to_space");
}

/// Zero-pads [C, H, W] at the bottom/right to [C, H2, W2].
template <class T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t H2, std::size_t W2) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H2 < H || W2 < W) throw ShapeError("pad2d: target smaller than input");
  std::vector<std::size_t> idx(C * H2 * W2, kZeroIndex);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) idx[(c * H2 + y) * W2 + xx] = (c * H + y) * W + xx;
  return gather(x, std::move(idx), {C, H2, W2}, "pad2d");
}

/// Keeps the top-left [C, H2, W2] window.
template <class T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t H2, std::size_t W2) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H2 > H || W2 > W) throw ShapeError("crop2d: target larger than input");
  std::vector<std::size_t> idx(C * H2 * W2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H2; ++y)
      for (std::size_t xx = 0; xx < W2; ++xx) idx[(c * H2 + y) * W2 + xx] = (c * H + y) * W + xx;
  return gather(x, std::move(idx), {C, H2, W2}, "crop2d");
}

/// Mean absolute error over the selected cells of every [k, H, W] map.
/// `mask` has H*W entries; nonzero selects a cell.
template <class T>
Tensor<T> masked_mae(const Tensor<T>& pred, std::span<const T> target,
                     std::span<const std::uint8_t> mask) {
  if (pred.rank() != 3 || target.size() != pred.size()) {
    throw ShapeError("masked_mae: prediction " + to_string(pred.shape()) +
                     " and target of length " + std::to_string(target.size()) + " disagree");
  }
  const std::size_t k = pred.dim(0), hw = pred.dim(1) * pred.dim(2);
  if (mask.size() != hw) throw ShapeError("masked_mae: mask does not cover the grid");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw DataError("masked_mae: empty mask");
  const T denom = static_cast<T>(count * k);
  std::vector<T> residual(pred.size());
  T total = T(0);
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t idx = l * hw + i;
      if (!mask[i]) continue;
      residual[idx] = pred[idx] - target[idx];
      total += std::abs(residual[idx]);
    }
  }
  return make_result<T>({1}, {total / denom}, {pred}, "masked_mae",
                        [residual = std::move(residual), denom](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    const T s = self.grad[0] / denom;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (residual[i] > T(0)) g[i] += s;
      else if (residual[i] < T(0)) g[i] -= s;
    }
  });
}

}  // namespace icemamba
