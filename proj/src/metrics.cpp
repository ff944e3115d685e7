// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace d2net::metrics {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape " + a.str() + " vs " + b.str());
}

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  const double r = static_cast<double>(kSsimWindow / 2);
  double sum = 0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - r;
    g[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-region separable Gaussian filter of an h x w plane.
void filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                  const std::array<double, kSsimWindow>& g, std::vector<double>& tmp, std::vector<double>& dst) {
  const std::size_t k = kSsimWindow;
  const std::size_t ow = w - k + 1, oh = h - k + 1;
  tmp.assign(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += g[t] * src[y * w + x + t];
      tmp[y * ow + x] = s;
    }
  dst.assign(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += g[t] * tmp[(y + t) * ow + x];
      dst[y * ow + x] = s;
    }
}

} // namespace

template <Scalar T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  require_same(a.shape(), b.shape(), "psnr");
  if (a.numel() == 0) throw ShapeError("psnr: empty images");
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0) return kIdentical;
  const double mse = se / static_cast<double>(a.numel());
  return 10.0 * std::log10(peak * peak / mse);
}

template <Scalar T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "ssim");
  const Shape s = a.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow)
    throw ShapeError("ssim: image " + s.str() + " smaller than the 11x11 window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = gaussian_taps();
  const std::size_t hw = s.plane();
  std::vector<double> pa(hw), pb(hw), prod(hw), tmp, ma, mb, maa, mbb, mab;
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* xa = a.plane(n, c);
      const T* xb = b.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        pa[i] = static_cast<double>(xa[i]);
        pb[i] = static_cast<double>(xb[i]);
      }
      filter_valid(pa, s.h, s.w, g, tmp, ma);
      filter_valid(pb, s.h, s.w, g, tmp, mb);
      for (std::size_t i = 0; i < hw; ++i) prod[i] = pa[i] * pa[i];
      filter_valid(prod, s.h, s.w, g, tmp, maa);
      for (std::size_t i = 0; i < hw; ++i) prod[i] = pb[i] * pb[i];
      filter_valid(prod, s.h, s.w, g, tmp, mbb);
      for (std::size_t i = 0; i < hw; ++i) prod[i] = pa[i] * pb[i];
      filter_valid(prod, s.h, s.w, g, tmp, mab);
      double sum = 0;
      for (std::size_t i = 0; i < ma.size(); ++i) {
        const double ua = ma[i], ub = mb[i];
        const double va = maa[i] - ua * ua, vb = mbb[i] - ub * ub, cov = mab[i] - ua * ub;
        sum += ((2 * ua * ub + c1) * (2 * cov + c2)) / ((ua * ua + ub * ub + c1) * (va + vb + c2));
      }
      total += sum / static_cast<double>(ma.size());
    }
  return total / static_cast<double>(s.n * s.c);
}

template double psnr(const Tensor<float>&, const Tensor<float>&, double);
template double psnr(const Tensor<double>&, const Tensor<double>&, double);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

} // namespace d2net::metrics
