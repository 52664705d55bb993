#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "densr/autograd.hpp"
#include "densr/tensor.hpp"

namespace densr {
namespace ag {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor<S> out(a.value().shape);
  const auto &av = a.value(), &bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return make_op<S>(
      std::move(out), {a, b},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> { return {g, g}; },
      "add");
}

template <class S>
Var<S> add_raw(const Var<S>& a, const Var<S>& b) {
  return add(a, b);
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor<S> out(a.value().shape);
  const auto &av = a.value(), &bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return make_op<S>(
      std::move(out), {a, b},
      [](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> gb;
        if (need[1]) gb = mul_scalar(g, S(-1));
        return {g, gb};
      },
      "sub");
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor<S> out(a.value().shape);
  const auto &av = a.value(), &bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return make_op<S>(
      std::move(out), {a, b},
      [a, b](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> ga, gb;
        if (need[0]) ga = mul(g, b);
        if (need[1]) gb = mul(g, a);
        return {ga, gb};
      },
      "mul");
}

template <class S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a.value(), b.value(), "div");
  Tensor<S> out(a.value().shape);
  const auto &av = a.value(), &bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] / bv[i];
  return make_op<S>(
      std::move(out), {a, b},
      [a, b](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> ga, gb;
        if (need[0]) ga = div(g, b);
        if (need[1]) gb = mul_scalar(div(mul(g, a), mul(b, b)), S(-1));
        return {ga, gb};
      },
      "div");
}

template <class S>
Var<S> mul_scalar(const Var<S>& a, S c) {
  Tensor<S> out = a.value().map([c](S v) { return v * c; });
  return make_op<S>(
      std::move(out), {a},
      [c](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {mul_scalar(g, c)};
      },
      "mul_scalar");
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S c) {
  Tensor<S> out = a.value().map([c](S v) { return v + c; });
  return make_op<S>(
      std::move(out), {a},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> { return {g}; },
      "add_scalar");
}

template <class S>
Var<S> neg(const Var<S>& a) {
  return mul_scalar(a, S(-1));
}

template <class S>
Var<S> sqrt_op(const Var<S>& a) {
  Tensor<S> out = a.value().map([](S v) { return std::sqrt(v); });
  return make_op<S>(
      std::move(out), {a},
      [a](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {div(g, mul_scalar(sqrt_op(a), S(2)))};
      },
      "sqrt");
}

template <class S>
Var<S> exp_op(const Var<S>& a) {
  Tensor<S> out = a.value().map([](S v) { return std::exp(v); });
  return make_op<S>(
      std::move(out), {a},
      [a](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {mul(g, exp_op(a))};
      },
      "exp");
}

template <class S>
Var<S> log_op(const Var<S>& a) {
  Tensor<S> out = a.value().map([](S v) { return std::log(v); });
  return make_op<S>(
      std::move(out), {a},
      [a](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {div(g, a)};
      },
      "log");
}

// Subgradient 0 at exactly 0; loss tests sample tie-free inputs.
template <class S>
Var<S> abs_op(const Var<S>& a) {
  Tensor<S> out = a.value().map([](S v) { return std::abs(v); });
  Tensor<S> sign = a.value().map([](S v) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
  return make_op<S>(
      std::move(out), {a},
      [sign](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {mul(g, Var<S>::constant(sign))};
      },
      "abs");
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

// The masks below are piecewise constant in the input, so multiplying by the
// captured mask is also the correct second-order behaviour (a.e.).
template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Tensor<S> out = a.value().map([slope](S v) { return v > S(0) ? v : slope * v; });
  Tensor<S> mask = a.value().map([slope](S v) { return v > S(0) ? S(1) : slope; });
  return make_op<S>(
      std::move(out), {a},
      [mask](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {mul(g, Var<S>::constant(mask))};
      },
      "leaky_relu");
}

template <class S>
Var<S> relu(const Var<S>& a) {
  return leaky_relu(a, S(0));
}

template <class S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out = a.value().map([](S v) {
    return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  });
  Tensor<S> dmask(out.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i) dmask[i] = out[i] * (S(1) - out[i]);
  return make_op<S>(
      std::move(out), {a},
      [dmask](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        forbid_create_graph("sigmoid");
        return {mul(g, Var<S>::constant(dmask))};
      },
      "sigmoid");
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts (each linear pair is mutually adjoint)
// ---------------------------------------------------------------------------

template <class S>
Var<S> broadcast_to(const Var<S>& a, std::vector<int> shape);

template <class S>
Var<S> sum_all(const Var<S>& a) {
  S s = 0;
  for (std::int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  std::vector<int> ishape = a.value().shape;
  return make_op<S>(
      Tensor<S>::scalar(s), {a},
      [ishape](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {broadcast_to(g, ishape)};
      },
      "sum_all");
}

template <class S>
Var<S> broadcast_to(const Var<S>& a, std::vector<int> shape) {
  if (a.value().numel() != 1) throw std::invalid_argument("broadcast_to expects a scalar");
  Tensor<S> out(shape, a.value()[0]);
  return make_op<S>(
      std::move(out), {a},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {sum_all(g)};
      },
      "broadcast_to");
}

template <class S>
Var<S> mean_all(const Var<S>& a) {
  return mul_scalar(sum_all(a), S(1) / static_cast<S>(a.value().numel()));
}

template <class S>
Var<S> broadcast_per_sample(const Var<S>& a, std::vector<int> shape);

/// [N, ...] -> [N]
template <class S>
Var<S> sum_per_sample(const Var<S>& a) {
  const int n = a.value().shape[0];
  const std::int64_t per = a.value().numel() / n;
  Tensor<S> out({n});
  for (int i = 0; i < n; ++i) {
    S s = 0;
    const S* p = a.value().ptr() + i * per;
    for (std::int64_t j = 0; j < per; ++j) s += p[j];
    out[i] = s;
  }
  std::vector<int> ishape = a.value().shape;
  return make_op<S>(
      std::move(out), {a},
      [ishape](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {broadcast_per_sample(g, ishape)};
      },
      "sum_per_sample");
}

template <class S>
Var<S> broadcast_per_sample(const Var<S>& a, std::vector<int> shape) {
  const int n = shape[0];
  if (a.value().rank() != 1 || a.value().shape[0] != n)
    throw std::invalid_argument("broadcast_per_sample expects [N]");
  Tensor<S> out(shape);
  const std::int64_t per = out.numel() / n;
  for (int i = 0; i < n; ++i) {
    S v = a.value()[i];
    S* p = out.ptr() + i * per;
    for (std::int64_t j = 0; j < per; ++j) p[j] = v;
  }
  return make_op<S>(
      std::move(out), {a},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {sum_per_sample(g)};
      },
      "broadcast_per_sample");
}

template <class S>
Var<S> broadcast_spatial(const Var<S>& a, int h, int w);

/// [N,C,H,W] -> [N,C]
template <class S>
Var<S> sum_spatial(const Var<S>& a) {
  const auto& v = a.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor<S> out({n, c});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n * c; ++i) {
    S s = 0;
    const S* p = v.ptr() + i * hw;
    for (std::int64_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s;
  }
  return make_op<S>(
      std::move(out), {a},
      [h, w](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {broadcast_spatial(g, h, w)};
      },
      "sum_spatial");
}

template <class S>
Var<S> broadcast_spatial(const Var<S>& a, int h, int w) {
  const int n = a.value().shape[0], c = a.value().shape[1];
  Tensor<S> out({n, c, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n * c; ++i) {
    S v = a.value()[i];
    S* p = out.ptr() + i * hw;
    for (std::int64_t j = 0; j < hw; ++j) p[j] = v;
  }
  return make_op<S>(
      std::move(out), {a},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {sum_spatial(g)};
      },
      "broadcast_spatial");
}

/// Per-channel gate: out[n,c,:,:] = x[n,c,:,:] * s[n,c].
template <class S>
Var<S> channel_scale(const Var<S>& x, const Var<S>& s) {
  const auto& v = x.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  if (s.value().rank() != 2 || s.value().shape[0] != n || s.value().shape[1] != c)
    throw std::invalid_argument("channel_scale expects gate [N,C]");
  Tensor<S> out(v.shape);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n * c; ++i) {
    const S g = s.value()[i];
    const S* p = v.ptr() + i * hw;
    S* q = out.ptr() + i * hw;
    for (std::int64_t j = 0; j < hw; ++j) q[j] = p[j] * g;
  }
  return make_op<S>(
      std::move(out), {x, s},
      [x, s](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> gx, gs;
        if (need[0]) gx = channel_scale(g, s);
        if (need[1]) gs = sum_spatial(mul(g, x));
        return {gx, gs};
      },
      "channel_scale");
}

template <class S>
Var<S> broadcast_nchw(const Var<S>& a, int n, int h, int w);

/// [N,C,H,W] -> [C] (conv bias gradient)
template <class S>
Var<S> sum_nhw(const Var<S>& a) {
  const auto& v = a.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor<S> out({c});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      S s = 0;
      const S* p = v.ptr() + (static_cast<std::int64_t>(i) * c + j) * hw;
      for (std::int64_t t = 0; t < hw; ++t) s += p[t];
      out[j] += s;
    }
  return make_op<S>(
      std::move(out), {a},
      [n, h, w](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {broadcast_nchw(g, n, h, w)};
      },
      "sum_nhw");
}

template <class S>
Var<S> broadcast_nchw(const Var<S>& a, int n, int h, int w) {
  const int c = a.value().shape[0];
  Tensor<S> out({n, c, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      S v = a.value()[j];
      S* p = out.ptr() + (static_cast<std::int64_t>(i) * c + j) * hw;
      for (std::int64_t t = 0; t < hw; ++t) p[t] = v;
    }
  return make_op<S>(
      std::move(out), {a},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {sum_nhw(g)};
      },
      "broadcast_nchw");
}

template <class S>
Var<S> broadcast_rows(const Var<S>& a, int rows);

/// [N,O] -> [O]
template <class S>
Var<S> col_sum(const Var<S>& a) {
  const int n = a.value().shape[0], o = a.value().shape[1];
  Tensor<S> out({o});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out[j] += a.value().at2(i, j);
  return make_op<S>(
      std::move(out), {a},
      [n](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {broadcast_rows(g, n)};
      },
      "col_sum");
}

template <class S>
Var<S> broadcast_rows(const Var<S>& a, int rows) {
  const int o = a.value().shape[0];
  Tensor<S> out({rows, o});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < o; ++j) out.at2(i, j) = a.value()[j];
  return make_op<S>(
      std::move(out), {a},
      [](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {col_sum(g)};
      },
      "broadcast_rows");
}

template <class S>
Var<S> add_rowvec(const Var<S>& m, const Var<S>& b) {
  const int n = m.value().shape[0], o = m.value().shape[1];
  if (b.value().rank() != 1 || b.value().shape[0] != o)
    throw std::invalid_argument("add_rowvec: bias shape");
  Tensor<S> out(m.value().shape);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out.at2(i, j) = m.value().at2(i, j) + b.value()[j];
  return make_op<S>(
      std::move(out), {m, b},
      [](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> gb;
        if (need[1]) gb = col_sum(g);
        return {g, gb};
      },
      "add_rowvec");
}

// ---------------------------------------------------------------------------
// Shape movement
// ---------------------------------------------------------------------------

template <class S>
Var<S> reshape(const Var<S>& a, std::vector<int> shape) {
  Tensor<S> out = a.value().reshaped(shape);
  std::vector<int> ishape = a.value().shape;
  return make_op<S>(
      std::move(out), {a},
      [ishape](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {reshape(g, ishape)};
      },
      "reshape");
}

template <class S>
Var<S> pixel_unshuffle(const Var<S>& a, int r);

/// [N, C*r^2, H, W] -> [N, C, H*r, W*r]
template <class S>
Var<S> pixel_shuffle(const Var<S>& a, int r) {
  const auto& v = a.value();
  const int n = v.shape[0], cin = v.shape[1], h = v.shape[2], w = v.shape[3];
  if (cin % (r * r) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible");
  const int c = cin / (r * r);
  Tensor<S> out({n, c, h * r, w * r});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              out.at4(in, ic, y * r + i, x * r + j) = v.at4(in, ic * r * r + i * r + j, y, x);
  return make_op<S>(
      std::move(out), {a},
      [r](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {pixel_unshuffle(g, r)};
      },
      "pixel_shuffle");
}

template <class S>
Var<S> pixel_unshuffle(const Var<S>& a, int r) {
  const auto& v = a.value();
  const int n = v.shape[0], c = v.shape[1], hr = v.shape[2], wr = v.shape[3];
  const int h = hr / r, w = wr / r;
  Tensor<S> out({n, c * r * r, h, w});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              out.at4(in, ic * r * r + i * r + j, y, x) = v.at4(in, ic, y * r + i, x * r + j);
  return make_op<S>(
      std::move(out), {a},
      [r](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {pixel_shuffle(g, r)};
      },
      "pixel_unshuffle");
}

template <class S>
Var<S> slice_channels(const Var<S>& a, int c0, int c1);

template <class S>
Var<S> pad_channels(const Var<S>& a, int before, int after) {
  const auto& v = a.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor<S> out({n, before + c + after, h, w});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      std::memcpy(out.ptr() + out.index4(in, before + ic, 0, 0), v.ptr() + v.index4(in, ic, 0, 0),
                  sizeof(S) * h * w);
  return make_op<S>(
      std::move(out), {a},
      [before, c](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {slice_channels(g, before, before + c)};
      },
      "pad_channels");
}

template <class S>
Var<S> slice_channels(const Var<S>& a, int c0, int c1) {
  const auto& v = a.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_channels range");
  Tensor<S> out({n, c1 - c0, h, w});
  for (int in = 0; in < n; ++in)
    for (int ic = c0; ic < c1; ++ic)
      std::memcpy(out.ptr() + out.index4(in, ic - c0, 0, 0), v.ptr() + v.index4(in, ic, 0, 0),
                  sizeof(S) * h * w);
  return make_op<S>(
      std::move(out), {a},
      [c0, c, c1](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        return {pad_channels(g, c0, c - c1)};
      },
      "slice_channels");
}

template <class S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  const auto &av = a.value(), &bv = b.value();
  if (av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[2] || av.shape[3] != bv.shape[3])
    throw std::invalid_argument("concat_channels: incompatible shapes");
  const int n = av.shape[0], ca = av.shape[1], cb = bv.shape[1], h = av.shape[2], w = av.shape[3];
  Tensor<S> out({n, ca + cb, h, w});
  for (int in = 0; in < n; ++in) {
    std::memcpy(out.ptr() + out.index4(in, 0, 0, 0), av.ptr() + av.index4(in, 0, 0, 0),
                sizeof(S) * ca * h * w);
    std::memcpy(out.ptr() + out.index4(in, ca, 0, 0), bv.ptr() + bv.index4(in, 0, 0, 0),
                sizeof(S) * cb * h * w);
  }
  return make_op<S>(
      std::move(out), {a, b},
      [ca, cb](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> ga, gb;
        if (need[0]) ga = slice_channels(g, 0, ca);
        if (need[1]) gb = slice_channels(g, ca, ca + cb);
        return {ga, gb};
      },
      "concat_channels");
}

// ---------------------------------------------------------------------------
// Matrix multiply / linear
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul_value(const Tensor<S>& a, const Tensor<S>& b, bool ta, bool tb) {
  const int am = a.shape[0], an = a.shape[1];
  const int bm = b.shape[0], bn = b.shape[1];
  const int m = ta ? an : am, k = ta ? am : an;
  const int k2 = tb ? bn : bm, n = tb ? bm : bn;
  if (k != k2) throw std::invalid_argument("matmul: inner dims");
  Tensor<S> out({m, n});
  ECMap<S> A(a.ptr(), am, an), B(b.ptr(), bm, bn);
  EMap<S> C(out.ptr(), m, n);
  if (!ta && !tb)
    C.noalias() = A * B;
  else if (ta && !tb)
    C.noalias() = A.transpose() * B;
  else if (!ta && tb)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A.transpose() * B.transpose();
  return out;
}

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool ta = false, bool tb = false) {
  Tensor<S> out = matmul_value(a.value(), b.value(), ta, tb);
  return make_op<S>(
      std::move(out), {a, b},
      [a, b, ta, tb](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> ga, gb;
        // d(A^ta B^tb) under each transpose combination
        if (need[0]) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        if (need[1]) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return {ga, gb};
      },
      "matmul");
}

/// x [N,F] * W [O,F]^T + b
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  Var<S> y = matmul(x, w, false, true);
  if (b.defined()) y = add_rowvec(y, b);
  return y;
}

// ---------------------------------------------------------------------------
// Convolution (square kernel, zero padding). The forward, input-gradient and
// weight-gradient ops form a closed triple under differentiation, which is
// what makes the gradient-penalty parameter updates possible.
// ---------------------------------------------------------------------------

namespace convdet {

inline int out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <class S>
void im2col(const S* x, int c, int h, int w, int k, int stride, int pad, S* cols, int oh, int ow) {
  for (int ic = 0; ic < c; ++ic)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        S* row = cols + (static_cast<std::int64_t>((ic * k + ki) * k + kj)) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::fill(row + static_cast<std::int64_t>(y) * ow, row + static_cast<std::int64_t>(y + 1) * ow, S(0));
            continue;
          }
          const S* src = x + (static_cast<std::int64_t>(ic) * h + iy) * w;
          S* dst = row + static_cast<std::int64_t>(y) * ow;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kj;
            dst[xo] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
}

template <class S>
void col2im(const S* cols, int c, int h, int w, int k, int stride, int pad, S* x, int oh, int ow) {
  // adjoint of im2col: scatter-add
  for (int ic = 0; ic < c; ++ic)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const S* row = cols + (static_cast<std::int64_t>((ic * k + ki) * k + kj)) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          S* dst = x + (static_cast<std::int64_t>(ic) * h + iy) * w;
          const S* src = row + static_cast<std::int64_t>(y) * ow;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[xo];
          }
        }
      }
}

}  // namespace convdet

template <class S>
Var<S> conv2d_grad_input(const Var<S>& g, const Var<S>& w, int stride, int pad, int in_h, int in_w);
template <class S>
Var<S> conv2d_grad_weight(const Var<S>& x, const Var<S>& g, int stride, int pad, int k);

/// x [N,Cin,H,W], w [Cout,Cin,k,k], optional b [Cout]
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], ww = xv.shape[3];
  const int cout = wv.shape[0], k = wv.shape[2];
  if (wv.shape[1] != cin) throw std::invalid_argument("conv2d: channel mismatch");
  if (h + 2 * pad < k || ww + 2 * pad < k) throw std::invalid_argument("conv2d: input smaller than kernel");
  const int oh = convdet::out_size(h, k, stride, pad), ow = convdet::out_size(ww, k, stride, pad);
  Tensor<S> out({n, cout, oh, ow});
  const std::int64_t crows = static_cast<std::int64_t>(cin) * k * k;
  std::vector<S> cols(static_cast<std::size_t>(crows * oh * ow));
  ECMap<S> W(wv.ptr(), cout, crows);
  for (int i = 0; i < n; ++i) {
    convdet::im2col(xv.ptr() + xv.index4(i, 0, 0, 0), cin, h, ww, k, stride, pad, cols.data(), oh, ow);
    ECMap<S> C(cols.data(), crows, static_cast<std::int64_t>(oh) * ow);
    EMap<S> O(out.ptr() + out.index4(i, 0, 0, 0), cout, static_cast<std::int64_t>(oh) * ow);
    O.noalias() = W * C;
  }
  if (b.defined()) {
    const auto& bv = b.value();
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < cout; ++c) {
        S* p = out.ptr() + out.index4(i, c, 0, 0);
        const S bias = bv[c];
        for (std::int64_t t = 0; t < static_cast<std::int64_t>(oh) * ow; ++t) p[t] += bias;
      }
  }
  std::vector<Var<S>> inputs = b.defined() ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
  return make_op<S>(
      std::move(out), std::move(inputs),
      [x, w, stride, pad, h, ww, k](const Var<S>& g, const std::vector<char>& need) -> std::vector<Var<S>> {
        std::vector<Var<S>> gs(need.size());
        if (need[0]) gs[0] = conv2d_grad_input(g, w, stride, pad, h, ww);
        if (need[1]) gs[1] = conv2d_grad_weight(x, g, stride, pad, k);
        if (need.size() > 2 && need[2]) gs[2] = sum_nhw(g);
        return gs;
      },
      "conv2d");
}

template <class S>
Var<S> conv2d_grad_input(const Var<S>& g, const Var<S>& w, int stride, int pad, int in_h, int in_w) {
  const auto& gv = g.value();
  const auto& wv = w.value();
  const int n = gv.shape[0], cout = gv.shape[1], oh = gv.shape[2], ow = gv.shape[3];
  const int cin = wv.shape[1], k = wv.shape[2];
  Tensor<S> out({n, cin, in_h, in_w});
  const std::int64_t crows = static_cast<std::int64_t>(cin) * k * k;
  std::vector<S> cols(static_cast<std::size_t>(crows * oh * ow));
  ECMap<S> W(wv.ptr(), cout, crows);
  for (int i = 0; i < n; ++i) {
    ECMap<S> G(gv.ptr() + gv.index4(i, 0, 0, 0), cout, static_cast<std::int64_t>(oh) * ow);
    EMap<S> C(cols.data(), crows, static_cast<std::int64_t>(oh) * ow);
    C.noalias() = W.transpose() * G;
    convdet::col2im(cols.data(), cin, in_h, in_w, k, stride, pad, out.ptr() + out.index4(i, 0, 0, 0), oh, ow);
  }
  return make_op<S>(
      std::move(out), {g, w},
      [g, w, stride, pad, k](const Var<S>& u, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> dg, dw;
        if (need[0]) dg = conv2d(u, w, Var<S>(), stride, pad);
        if (need[1]) dw = conv2d_grad_weight(u, g, stride, pad, k);
        return {dg, dw};
      },
      "conv2d_grad_input");
}

template <class S>
Var<S> conv2d_grad_weight(const Var<S>& x, const Var<S>& g, int stride, int pad, int k) {
  const auto& xv = x.value();
  const auto& gv = g.value();
  const int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
  const int cout = gv.shape[1], oh = gv.shape[2], ow = gv.shape[3];
  Tensor<S> out({cout, cin, k, k});
  const std::int64_t crows = static_cast<std::int64_t>(cin) * k * k;
  std::vector<S> cols(static_cast<std::size_t>(crows * oh * ow));
  EMap<S> W(out.ptr(), cout, crows);
  for (int i = 0; i < n; ++i) {
    convdet::im2col(xv.ptr() + xv.index4(i, 0, 0, 0), cin, h, w, k, stride, pad, cols.data(), oh, ow);
    ECMap<S> C(cols.data(), crows, static_cast<std::int64_t>(oh) * ow);
    ECMap<S> G(gv.ptr() + gv.index4(i, 0, 0, 0), cout, static_cast<std::int64_t>(oh) * ow);
    W.noalias() += G * C.transpose();
  }
  const int in_h = h, in_w = w;
  return make_op<S>(
      std::move(out), {x, g},
      [x, g, stride, pad, in_h, in_w](const Var<S>& u, const std::vector<char>& need) -> std::vector<Var<S>> {
        Var<S> dx, dg;
        if (need[0]) dx = conv2d_grad_input(g, u, stride, pad, in_h, in_w);
        if (need[1]) dg = conv2d(x, u, Var<S>(), stride, pad);
        return {dx, dg};
      },
      "conv2d_grad_weight");
}

// ---------------------------------------------------------------------------
// Normalization / softmax (first-order only)
// ---------------------------------------------------------------------------

template <class S>
struct BatchNormState {
  Tensor<S> running_mean;  // [C]
  Tensor<S> running_var;   // [C], unbiased
};

template <class S>
Var<S> batchnorm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                   BatchNormState<S>& state, bool training, S momentum = S(0.1),
                   S eps = S(1e-5)) {
  const auto& v = x.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  const std::int64_t cnt = static_cast<std::int64_t>(n) * h * w;
  Tensor<S> mean({c}), var({c});
  if (training) {
    for (int ic = 0; ic < c; ++ic) {
      S m = 0;
      for (int in = 0; in < n; ++in) {
        const S* p = v.ptr() + v.index4(in, ic, 0, 0);
        for (std::int64_t t = 0; t < static_cast<std::int64_t>(h) * w; ++t) m += p[t];
      }
      m /= static_cast<S>(cnt);
      S s = 0;
      for (int in = 0; in < n; ++in) {
        const S* p = v.ptr() + v.index4(in, ic, 0, 0);
        for (std::int64_t t = 0; t < static_cast<std::int64_t>(h) * w; ++t) {
          const S d = p[t] - m;
          s += d * d;
        }
      }
      mean[ic] = m;
      var[ic] = s / static_cast<S>(cnt);
    }
    const S unbias = cnt > 1 ? static_cast<S>(cnt) / static_cast<S>(cnt - 1) : S(1);
    for (int ic = 0; ic < c; ++ic) {
      state.running_mean[ic] = (S(1) - momentum) * state.running_mean[ic] + momentum * mean[ic];
      state.running_var[ic] = (S(1) - momentum) * state.running_var[ic] + momentum * var[ic] * unbias;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor<S> xhat(v.shape), inv_std({c});
  for (int ic = 0; ic < c; ++ic) inv_std[ic] = S(1) / std::sqrt(var[ic] + eps);
  Tensor<S> out(v.shape);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const S* p = v.ptr() + v.index4(in, ic, 0, 0);
      S* xh = xhat.ptr() + xhat.index4(in, ic, 0, 0);
      S* q = out.ptr() + out.index4(in, ic, 0, 0);
      const S m = mean[ic], is = inv_std[ic], ga = gv[ic], be = bv[ic];
      for (std::int64_t t = 0; t < static_cast<std::int64_t>(h) * w; ++t) {
        xh[t] = (p[t] - m) * is;
        q[t] = ga * xh[t] + be;
      }
    }

  return make_op<S>(
      std::move(out), {x, gamma, beta},
      [xhat, inv_std, gamma, training, n, c, h, w, cnt](const Var<S>& g, const std::vector<char>& need)
          -> std::vector<Var<S>> {
        forbid_create_graph("batchnorm2d");
        const auto& gval = g.value();
        Tensor<S> dgamma({c}), dbeta({c});
        for (int in = 0; in < n; ++in)
          for (int ic = 0; ic < c; ++ic) {
            const S* gp = gval.ptr() + gval.index4(in, ic, 0, 0);
            const S* xh = xhat.ptr() + xhat.index4(in, ic, 0, 0);
            S sg = 0, sgx = 0;
            for (std::int64_t t = 0; t < static_cast<std::int64_t>(h) * w; ++t) {
              sg += gp[t];
              sgx += gp[t] * xh[t];
            }
            dbeta[ic] += sg;
            dgamma[ic] += sgx;
          }
        Var<S> dx;
        if (need[0]) {
          Tensor<S> dxt(gval.shape);
          const auto& ga = gamma.value();
          if (training) {
            // dx = (gamma*inv_std/cnt) * (cnt*g - dbeta - xhat*dgamma)
            for (int in = 0; in < n; ++in)
              for (int ic = 0; ic < c; ++ic) {
                const S* gp = gval.ptr() + gval.index4(in, ic, 0, 0);
                const S* xh = xhat.ptr() + xhat.index4(in, ic, 0, 0);
                S* dp = dxt.ptr() + dxt.index4(in, ic, 0, 0);
                const S coef = ga[ic] * inv_std[ic] / static_cast<S>(cnt);
                for (std::int64_t t = 0; t < static_cast<std::int64_t>(h) * w; ++t)
                  dp[t] = coef * (static_cast<S>(cnt) * gp[t] - dbeta[ic] - xh[t] * dgamma[ic]);
              }
          } else {
            for (int in = 0; in < n; ++in)
              for (int ic = 0; ic < c; ++ic) {
                const S* gp = gval.ptr() + gval.index4(in, ic, 0, 0);
                S* dp = dxt.ptr() + dxt.index4(in, ic, 0, 0);
                const S coef = ga[ic] * inv_std[ic];
                for (std::int64_t t = 0; t < static_cast<std::int64_t>(h) * w; ++t)
                  dp[t] = coef * gp[t];
              }
          }
          dx = Var<S>::constant(std::move(dxt));
        }
        Var<S> dgv, dbv;
        if (need[1]) dgv = Var<S>::constant(std::move(dgamma));
        if (need[2]) dbv = Var<S>::constant(std::move(dbeta));
        return {dx, dgv, dbv};
      },
      "batchnorm2d");
}

/// Per-pixel softmax across the channel axis of [N,C,H,W].
template <class S>
Var<S> softmax_channels(const Var<S>& x) {
  const auto& v = x.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor<S> out(v.shape);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int in = 0; in < n; ++in)
    for (std::int64_t t = 0; t < hw; ++t) {
      S mx = v.ptr()[v.index4(in, 0, 0, 0) + t];
      for (int ic = 1; ic < c; ++ic)
        mx = std::max(mx, v.ptr()[v.index4(in, ic, 0, 0) + t]);
      S sum = 0;
      for (int ic = 0; ic < c; ++ic) {
        const S e = std::exp(v.ptr()[v.index4(in, ic, 0, 0) + t] - mx);
        out.ptr()[out.index4(in, ic, 0, 0) + t] = e;
        sum += e;
      }
      for (int ic = 0; ic < c; ++ic) out.ptr()[out.index4(in, ic, 0, 0) + t] /= sum;
    }
  Tensor<S> y = out;  // captured copy for the backward formula
  return make_op<S>(
      std::move(out), {x},
      [y, n, c, hw](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        forbid_create_graph("softmax_channels");
        const auto& gv = g.value();
        Tensor<S> dx(gv.shape);
        for (int in = 0; in < n; ++in)
          for (std::int64_t t = 0; t < hw; ++t) {
            S dot = 0;
            for (int ic = 0; ic < c; ++ic) {
              const std::int64_t idx = (static_cast<std::int64_t>(in) * c + ic) * hw + t;
              dot += gv[idx] * y[idx];
            }
            for (int ic = 0; ic < c; ++ic) {
              const std::int64_t idx = (static_cast<std::int64_t>(in) * c + ic) * hw + t;
              dx[idx] = y[idx] * (gv[idx] - dot);
            }
          }
        return {Var<S>::constant(std::move(dx))};
      },
      "softmax_channels");
}

/// Mean cross-entropy of row-softmax(logits [N,K]) against integer labels.
template <class S>
Var<S> softmax_cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
  const auto& v = logits.value();
  const int n = v.shape[0], k = v.shape[1];
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("labels size");
  Tensor<S> probs(v.shape);
  S loss = 0;
  for (int i = 0; i < n; ++i) {
    S mx = v.at2(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, v.at2(i, j));
    S sum = 0;
    for (int j = 0; j < k; ++j) {
      probs.at2(i, j) = std::exp(v.at2(i, j) - mx);
      sum += probs.at2(i, j);
    }
    for (int j = 0; j < k; ++j) probs.at2(i, j) /= sum;
    loss -= std::log(std::max(probs.at2(i, labels[i]), S(1e-30)));
  }
  loss /= static_cast<S>(n);
  return make_op<S>(
      Tensor<S>::scalar(loss), {logits},
      [probs, labels, n, k](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        forbid_create_graph("softmax_cross_entropy");
        Tensor<S> dx(probs.shape);
        const S gs = g.value()[0] / static_cast<S>(n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < k; ++j)
            dx.at2(i, j) = gs * (probs.at2(i, j) - (labels[i] == j ? S(1) : S(0)));
        return {Var<S>::constant(std::move(dx))};
      },
      "softmax_cross_entropy");
}

// ---------------------------------------------------------------------------
// Neighbor differences (building blocks of the smoothness losses)
// ---------------------------------------------------------------------------

/// Horizontal forward differences: out[..., y, x] = a[..., y, x+1] - a[..., y, x].
template <class S>
Var<S> diff_h(const Var<S>& a) {
  const auto& v = a.value();
  const int w = v.shape[v.rank() - 1];
  if (w < 2) throw std::invalid_argument("diff_h: width < 2");
  std::vector<int> oshape = v.shape;
  oshape.back() = w - 1;
  Tensor<S> out(oshape);
  const std::int64_t rows = v.numel() / w;
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* p = v.ptr() + r * w;
    S* q = out.ptr() + r * (w - 1);
    for (int x = 0; x + 1 < w; ++x) q[x] = p[x + 1] - p[x];
  }
  std::vector<int> ishape = v.shape;
  return make_op<S>(
      std::move(out), {a},
      [ishape, w, rows](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        forbid_create_graph("diff_h");
        Tensor<S> dx(ishape);
        const auto& gv = g.value();
        for (std::int64_t r = 0; r < rows; ++r) {
          const S* gp = gv.ptr() + r * (w - 1);
          S* dp = dx.ptr() + r * w;
          for (int x = 0; x + 1 < w; ++x) {
            dp[x + 1] += gp[x];
            dp[x] -= gp[x];
          }
        }
        return {Var<S>::constant(std::move(dx))};
      },
      "diff_h");
}

/// Vertical forward differences over the second-to-last axis.
template <class S>
Var<S> diff_v(const Var<S>& a) {
  const auto& v = a.value();
  const int rank = v.rank();
  const int h = v.shape[rank - 2], w = v.shape[rank - 1];
  if (h < 2) throw std::invalid_argument("diff_v: height < 2");
  std::vector<int> oshape = v.shape;
  oshape[rank - 2] = h - 1;
  Tensor<S> out(oshape);
  const std::int64_t planes = v.numel() / (static_cast<std::int64_t>(h) * w);
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const S* p = v.ptr() + pl * h * w;
    S* q = out.ptr() + pl * (h - 1) * w;
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x < w; ++x) q[y * w + x] = p[(y + 1) * w + x] - p[y * w + x];
  }
  std::vector<int> ishape = v.shape;
  return make_op<S>(
      std::move(out), {a},
      [ishape, h, w, planes](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        forbid_create_graph("diff_v");
        Tensor<S> dx(ishape);
        const auto& gv = g.value();
        for (std::int64_t pl = 0; pl < planes; ++pl) {
          const S* gp = gv.ptr() + pl * (h - 1) * w;
          S* dp = dx.ptr() + pl * h * w;
          for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x) {
              dp[(y + 1) * w + x] += gp[y * w + x];
              dp[y * w + x] -= gp[y * w + x];
            }
        }
        return {Var<S>::constant(std::move(dx))};
      },
      "diff_v");
}

template <class S>
Var<S> global_avg_pool(const Var<S>& x) {
  const auto& v = x.value();
  return mul_scalar(sum_spatial(x), S(1) / static_cast<S>(v.shape[2] * v.shape[3]));
}

/// 2x2 average pooling (even spatial dims).
template <class S>
Var<S> avg_pool2(const Var<S>& x) {
  const auto& v = x.value();
  const int n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: odd spatial dims");
  Tensor<S> out({n, c, h / 2, w / 2});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < h / 2; ++y)
        for (int xo = 0; xo < w / 2; ++xo)
          out.at4(in, ic, y, xo) =
              (v.at4(in, ic, 2 * y, 2 * xo) + v.at4(in, ic, 2 * y, 2 * xo + 1) +
               v.at4(in, ic, 2 * y + 1, 2 * xo) + v.at4(in, ic, 2 * y + 1, 2 * xo + 1)) /
              S(4);
  return make_op<S>(
      std::move(out), {x},
      [h, w](const Var<S>& g, const std::vector<char>&) -> std::vector<Var<S>> {
        forbid_create_graph("avg_pool2");
        const auto& gv = g.value();
        const int n = gv.shape[0], c = gv.shape[1];
        Tensor<S> dx({n, c, h, w});
        for (int in = 0; in < n; ++in)
          for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h / 2; ++y)
              for (int xo = 0; xo < w / 2; ++xo) {
                const S q = gv.at4(in, ic, y, xo) / S(4);
                dx.at4(in, ic, 2 * y, 2 * xo) = q;
                dx.at4(in, ic, 2 * y, 2 * xo + 1) = q;
                dx.at4(in, ic, 2 * y + 1, 2 * xo) = q;
                dx.at4(in, ic, 2 * y + 1, 2 * xo + 1) = q;
              }
        return {Var<S>::constant(std::move(dx))};
      },
      "avg_pool2");
}

}  // namespace ag
}  // namespace densr
