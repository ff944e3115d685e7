// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "d2net/nn_ops.hpp"
#include "d2net/tensor.hpp"

namespace d2net::testing {

template <Scalar T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

/// max |a - ref| / max |ref|: error relative to the reference's scale.
template <Scalar T>
double rel_err(const Tensor<T>& a, const Tensor<T>& ref) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(ref[i])));
    scale = std::max(scale, std::abs(static_cast<double>(ref[i])));
  }
  return scale > 0 ? diff / scale : diff;
}

inline bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

inline bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

/// Direct six-loop cross-correlation with "same" padding.
inline Tensor<double> conv_oracle(const Tensor<double>& x, const nn::ConvSpec& spec, const Tensor<double>& w,
                                  const Tensor<double>* bias) {
  const Shape s = x.shape();
  Tensor<double> out(Shape{s.n, spec.out_channels, s.h, s.w});
  const auto ph = static_cast<std::ptrdiff_t>(spec.kernel_h / 2);
  const auto pw = static_cast<std::ptrdiff_t>(spec.kernel_w / 2);
  const auto H = static_cast<std::ptrdiff_t>(s.h);
  const auto W = static_cast<std::ptrdiff_t>(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < spec.out_channels; ++o)
      for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
          double acc = bias ? (*bias)[o] : 0.0;
          const std::size_t first = spec.depthwise ? o : 0;
          const std::size_t last = spec.depthwise ? o + 1 : spec.in_channels;
          for (std::size_t c = first; c < last; ++c)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(spec.kernel_h); ++i)
              for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(spec.kernel_w); ++j) {
                std::ptrdiff_t sy = y + i - ph, sx = xx + j - pw;
                if (spec.boundary == nn::Boundary::zero) {
                  if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                } else {
                  sy = mirror_index(sy, H);
                  sx = mirror_index(sx, W);
                }
                const std::size_t wc = spec.depthwise ? 0 : c;
                acc += w(o, wc, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
                       x(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              }
          out(n, o, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) = acc;
        }
  return out;
}

/// Per-tile circular convolution sum_{m,n} a[m,n] b[(y-m) mod p, (x-n) mod p].
inline Tensor<double> circular_conv_oracle(const Tensor<double>& a, const Tensor<double>& b, std::size_t p) {
  const Shape s = a.shape();
  Tensor<double> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t ty = 0; ty < s.h; ty += p)
        for (std::size_t tx = 0; tx < s.w; tx += p)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) {
              double acc = 0;
              for (std::size_t m = 0; m < p; ++m)
                for (std::size_t k = 0; k < p; ++k)
                  acc += a(n, c, ty + m, tx + k) * b(n, c, ty + (y + p - m) % p, tx + (x + p - k) % p);
              out(n, c, ty + y, tx + x) = acc;
            }
  return out;
}

inline std::string fixture(const std::string& name) { return std::string(D2NET_FIXTURE_DIR) + "/" + name; }

} // namespace d2net::testing
