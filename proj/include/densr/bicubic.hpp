#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "densr/tensor.hpp"

namespace densr {

/// Catmull-Rom cubic convolution kernel (a = -0.5).
inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

namespace detail {

/// Symmetric reflection with edge duplication: -1 -> 0, n -> n-1.
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

struct Taps {
  int first;
  std::vector<double> w;
};

/// Tap weights for one output coordinate. When minifying, the kernel is
/// stretched by the scale factor (antialiasing); weights are normalized to
/// preserve constants exactly.
inline Taps axis_taps(int o, double scale) {
  const double center = (o + 0.5) * scale - 0.5;
  const double fscale = scale > 1.0 ? scale : 1.0;
  const double support = 2.0 * fscale;
  const int lo = static_cast<int>(std::ceil(center - support));
  const int hi = static_cast<int>(std::floor(center + support));
  Taps t;
  t.first = lo;
  t.w.resize(static_cast<std::size_t>(hi - lo + 1));
  double sum = 0;
  for (int i = lo; i <= hi; ++i) {
    const double wv = cubic_kernel((i - center) / fscale);
    t.w[static_cast<std::size_t>(i - lo)] = wv;
    sum += wv;
  }
  if (sum != 0)
    for (auto& wv : t.w) wv /= sum;
  return t;
}

}  // namespace detail

/// Separable cubic resampling of a [C,H,W] image to [C,out_h,out_w].
/// Downscaling applies the scale-stretched (antialiased) kernel; edges use
/// symmetric reflection.
template <class S>
Tensor<S> bicubic_resize(const Tensor<S>& img, int out_h, int out_w) {
  if (img.rank() != 3) throw std::invalid_argument("bicubic_resize expects [C,H,W]");
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("bicubic_resize: bad output size");

  // horizontal pass
  const double sx = static_cast<double>(w) / out_w;
  std::vector<detail::Taps> xt(static_cast<std::size_t>(out_w));
  for (int x = 0; x < out_w; ++x) xt[static_cast<std::size_t>(x)] = detail::axis_taps(x, sx);
  Tensor<double> mid({c, h, out_w});
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const auto& t = xt[static_cast<std::size_t>(x)];
        double acc = 0;
        for (std::size_t k = 0; k < t.w.size(); ++k)
          acc += t.w[k] *
                 static_cast<double>(img.at3(ic, y, detail::reflect_index(t.first + static_cast<int>(k), w)));
        mid.at3(ic, y, x) = acc;
      }

  // vertical pass
  const double sy = static_cast<double>(h) / out_h;
  std::vector<detail::Taps> yt(static_cast<std::size_t>(out_h));
  for (int y = 0; y < out_h; ++y) yt[static_cast<std::size_t>(y)] = detail::axis_taps(y, sy);
  Tensor<S> out({c, out_h, out_w});
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < out_h; ++y) {
      const auto& t = yt[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < t.w.size(); ++k)
          acc += t.w[k] * mid.at3(ic, detail::reflect_index(t.first + static_cast<int>(k), h), x);
        out.at3(ic, y, x) = static_cast<S>(acc);
      }
    }
  return out;
}

/// Bicubic downsampling by an integer factor, clamped to [0,1].
template <class S>
Tensor<S> degrade(const Tensor<S>& hr, int scale) {
  if (scale != 4 && scale != 8) throw std::invalid_argument("degrade: scale must be 4 or 8");
  if (hr.rank() != 3) throw std::invalid_argument("degrade expects [C,H,W]");
  if (hr.shape[1] % scale != 0 || hr.shape[2] % scale != 0)
    throw std::invalid_argument("degrade: spatial dims not divisible by scale");
  Tensor<S> out = bicubic_resize(hr, hr.shape[1] / scale, hr.shape[2] / scale);
  for (auto& v : out.data) v = v < S(0) ? S(0) : (v > S(1) ? S(1) : v);
  return out;
}

}  // namespace densr
