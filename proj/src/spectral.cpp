// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace d2net::spectral {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

thread_local std::vector<double> line_re;
thread_local std::vector<double> line_im;

void ensure_line(std::size_t n) {
  if (line_re.size() < n) {
    line_re.resize(n);
    line_im.resize(n);
  }
}

template <Scalar T>
ComplexGrid<T> direct_sum(const ComplexGrid<T>& in, double sign) {
  const std::size_t h = in.h;
  const std::size_t w = in.w;
  const double s = 1.0 / std::sqrt(static_cast<double>(h * w));
  ComplexGrid<T> out(h, w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      double acc_re = 0;
      double acc_im = 0;
      for (std::size_t m = 0; m < h; ++m)
        for (std::size_t n = 0; n < w; ++n) {
          const double angle = sign * kTwoPi *
                               (static_cast<double>((m * u) % h) / static_cast<double>(h) +
                                static_cast<double>((n * v) % w) / static_cast<double>(w));
          const double c = std::cos(angle);
          const double si = std::sin(angle);
          const double a = in.re[m * w + n];
          const double b = in.im[m * w + n];
          acc_re += a * c - b * si;
          acc_im += a * si + b * c;
        }
      out.re[u * w + v] = static_cast<T>(acc_re * s);
      out.im[u * w + v] = static_cast<T>(acc_im * s);
    }
  return out;
}

} // namespace

void require_patch_multiple(const Shape& s, std::size_t patch, const char* who) {
  if (patch == 0 || s.h % patch != 0 || s.w % patch != 0)
    throw ShapeError(std::string(who) + ": extents " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " are not multiples of the frequency patch " + std::to_string(patch) +
                     "; pad the input first");
}

template <Scalar T>
ComplexGrid<T> dft2_direct(std::span<const T> x, std::size_t h, std::size_t w) {
  if (x.size() != h * w) throw ShapeError("dft2_direct: grid size does not match h*w");
  ComplexGrid<T> in(h, w);
  std::copy(x.begin(), x.end(), in.re.begin());
  return direct_sum(in, -1.0);
}

template <Scalar T>
ComplexGrid<T> idft2_direct(const ComplexGrid<T>& X) {
  return direct_sum(X, 1.0);
}

Dft2Plan::Dft2Plan(std::size_t h, std::size_t w) : h_(h), w_(w) {
  if (h == 0 || w == 0) throw ShapeError("Dft2Plan: extents must be positive");
  // Dense n x n twiddle matrices, entry (j, k) = exp(-2 pi i jk / n).
  auto table = [](std::size_t n, std::vector<double>& c, std::vector<double>& s) {
    c.resize(n * n);
    s.resize(n * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const double angle = kTwoPi * static_cast<double>((j * k) % n) / static_cast<double>(n);
        c[j * n + k] = std::cos(angle);
        s[j * n + k] = std::sin(angle);
      }
  };
  table(h, cos_h_, sin_h_);
  table(w, cos_w_, sin_w_);
}

void Dft2Plan::transform_rows(double* re, double* im, bool inverse) const {
  ensure_line(2 * w_);
  double* out_re = line_re.data();
  double* out_im = line_im.data();
  const double sg = inverse ? 1.0 : -1.0;
  for (std::size_t m = 0; m < h_; ++m) {
    double* r = re + m * w_;
    double* i = im + m * w_;
    std::fill_n(out_re, w_, 0.0);
    std::fill_n(out_im, w_, 0.0);
    for (std::size_t n = 0; n < w_; ++n) {
      const double a = r[n], b = i[n];
      const double* c = cos_w_.data() + n * w_;
      const double* s = sin_w_.data() + n * w_;
      for (std::size_t v = 0; v < w_; ++v) {
        const double sv = sg * s[v];
        out_re[v] += a * c[v] - b * sv;
        out_im[v] += a * sv + b * c[v];
      }
    }
    std::copy_n(out_re, w_, r);
    std::copy_n(out_im, w_, i);
  }
}

void Dft2Plan::transform_cols(double* re, double* im, bool inverse) const {
  ensure_line(h_ * w_);
  double* out_re = line_re.data();
  double* out_im = line_im.data();
  const double sg = inverse ? 1.0 : -1.0;
  std::fill_n(out_re, h_ * w_, 0.0);
  std::fill_n(out_im, h_ * w_, 0.0);
  for (std::size_t u = 0; u < h_; ++u) {
    double* orow_re = out_re + u * w_;
    double* orow_im = out_im + u * w_;
    for (std::size_t m = 0; m < h_; ++m) {
      const double c = cos_h_[m * h_ + u];
      const double s = sg * sin_h_[m * h_ + u];
      const double* a = re + m * w_;
      const double* b = im + m * w_;
      for (std::size_t n = 0; n < w_; ++n) {
        orow_re[n] += a[n] * c - b[n] * s;
        orow_im[n] += a[n] * s + b[n] * c;
      }
    }
  }
  std::copy_n(out_re, h_ * w_, re);
  std::copy_n(out_im, h_ * w_, im);
}

template <Scalar T>
void Dft2Plan::forward_real(const T* x, std::size_t stride, double* re, double* im) const {
  // Row pass on real input: the imaginary terms vanish.
  std::fill_n(re, h_ * w_, 0.0);
  std::fill_n(im, h_ * w_, 0.0);
  for (std::size_t m = 0; m < h_; ++m) {
    double* r = re + m * w_;
    double* i = im + m * w_;
    for (std::size_t n = 0; n < w_; ++n) {
      const double a = static_cast<double>(x[m * stride + n]);
      const double* c = cos_w_.data() + n * w_;
      const double* s = sin_w_.data() + n * w_;
      for (std::size_t v = 0; v < w_; ++v) {
        r[v] += a * c[v];
        i[v] -= a * s[v];
      }
    }
  }
  transform_cols(re, im, false);
  const double s = 1.0 / std::sqrt(static_cast<double>(h_ * w_));
  for (std::size_t i = 0; i < h_ * w_; ++i) {
    re[i] *= s;
    im[i] *= s;
  }
}

void Dft2Plan::inverse(double* re, double* im) const {
  transform_rows(re, im, true);
  transform_cols(re, im, true);
  const double s = 1.0 / std::sqrt(static_cast<double>(h_ * w_));
  for (std::size_t i = 0; i < h_ * w_; ++i) {
    re[i] *= s;
    im[i] *= s;
  }
}

template <Scalar T>
ComplexGrid<T> dft2(std::span<const T> x, std::size_t h, std::size_t w) {
  if (x.size() != h * w) throw ShapeError("dft2: grid size does not match h*w");
  Dft2Plan plan(h, w);
  std::vector<double> re(h * w), im(h * w);
  plan.forward_real(x.data(), w, re.data(), im.data());
  ComplexGrid<T> out(h, w);
  std::transform(re.begin(), re.end(), out.re.begin(), [](double v) { return static_cast<T>(v); });
  std::transform(im.begin(), im.end(), out.im.begin(), [](double v) { return static_cast<T>(v); });
  return out;
}

template <Scalar T>
ComplexGrid<T> idft2(const ComplexGrid<T>& X) {
  Dft2Plan plan(X.h, X.w);
  std::vector<double> re(X.re.begin(), X.re.end()), im(X.im.begin(), X.im.end());
  plan.inverse(re.data(), im.data());
  ComplexGrid<T> out(X.h, X.w);
  std::transform(re.begin(), re.end(), out.re.begin(), [](double v) { return static_cast<T>(v); });
  std::transform(im.begin(), im.end(), out.im.begin(), [](double v) { return static_cast<T>(v); });
  return out;
}

template <Scalar T>
std::vector<T> idft2_real(const ComplexGrid<T>& X, double relative_limit) {
  Dft2Plan plan(X.h, X.w);
  std::vector<double> re(X.re.begin(), X.re.end()), im(X.im.begin(), X.im.end());
  plan.inverse(re.data(), im.data());
  double max_re = 0;
  double max_im = 0;
  for (std::size_t i = 0; i < re.size(); ++i) {
    max_re = std::max(max_re, std::abs(re[i]));
    max_im = std::max(max_im, std::abs(im[i]));
  }
  if (max_im > relative_limit * max_re)
    throw SpectralError("idft2: imaginary residue " + std::to_string(max_im) + " exceeds " +
                        std::to_string(relative_limit) + " x max real " + std::to_string(max_re) +
                        "; spectrum is not that of a real signal");
  return std::vector<T>(re.begin(), re.end());
}

template <Scalar T>
AmpPhase<T> amp_phase(const ComplexGrid<T>& X) {
  AmpPhase<T> out;
  out.amplitude.resize(X.re.size());
  out.phase.resize(X.re.size());
  constexpr T pi = std::numbers::pi_v<T>;
  for (std::size_t i = 0; i < X.re.size(); ++i) {
    const T r = X.re[i];
    const T im = X.im[i];
    out.amplitude[i] = std::hypot(r, im);
    T p = (r == T(0) && im == T(0)) ? T(0) : std::atan2(im, r);
    if (p <= -pi) p = pi;
    out.phase[i] = p;
  }
  return out;
}

template <Scalar T>
PatchSpectra<T> patchwise_dft(const Tensor<T>& x, std::size_t patch) {
  const Shape& s = x.shape();
  require_patch_multiple(s, patch, "patchwise_dft");
  PatchSpectra<T> out{s, patch, {}};
  Dft2Plan plan(patch, patch);
  std::vector<double> re(patch * patch), im(patch * patch);
  out.grids.reserve(s.n * s.c * out.tiles_y() * out.tiles_x());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t ty = 0; ty < out.tiles_y(); ++ty)
        for (std::size_t tx = 0; tx < out.tiles_x(); ++tx) {
          plan.forward_real(x.plane(n, c) + ty * patch * s.w + tx * patch, s.w, re.data(), im.data());
          ComplexGrid<T> g(patch, patch);
          std::transform(re.begin(), re.end(), g.re.begin(), [](double v) { return static_cast<T>(v); });
          std::transform(im.begin(), im.end(), g.im.begin(), [](double v) { return static_cast<T>(v); });
          out.grids.push_back(std::move(g));
        }
  return out;
}

template <Scalar T>
Tensor<T> patchwise_idft(const PatchSpectra<T>& spectra, double relative_limit) {
  const Shape& s = spectra.shape;
  const std::size_t patch = spectra.patch;
  require_patch_multiple(s, patch, "patchwise_idft");
  if (spectra.grids.size() != s.n * s.c * spectra.tiles_y() * spectra.tiles_x())
    throw ShapeError("patchwise_idft: grid count does not match the recorded shape");
  Tensor<T> out(s);
  std::size_t g = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t ty = 0; ty < spectra.tiles_y(); ++ty)
        for (std::size_t tx = 0; tx < spectra.tiles_x(); ++tx) {
          const auto tile = idft2_real(spectra.grids[g++], relative_limit);
          T* dst = out.plane(n, c) + ty * patch * s.w + tx * patch;
          for (std::size_t m = 0; m < patch; ++m)
            std::copy_n(tile.data() + m * patch, patch, dst + m * s.w);
        }
  return out;
}

template <Scalar T>
double spectral_product(const Dft2Plan& plan, const T* a, const T* b, std::size_t stride, T* out,
                        bool conjugate_b, std::span<double> scratch) {
  const std::size_t hw = plan.h() * plan.w();
  double* ar = scratch.data();
  double* ai = ar + hw;
  double* br = ai + hw;
  double* bi = br + hw;
  plan.forward_real(a, stride, ar, ai);
  plan.forward_real(b, stride, br, bi);
  const double sg = conjugate_b ? -1.0 : 1.0;
  for (std::size_t i = 0; i < hw; ++i) {
    const double pr = ar[i] * br[i] - ai[i] * sg * bi[i];
    const double pi = ar[i] * sg * bi[i] + ai[i] * br[i];
    ar[i] = pr;
    ai[i] = pi;
  }
  plan.inverse(ar, ai);
  double residue = 0;
  for (std::size_t m = 0; m < plan.h(); ++m)
    for (std::size_t n = 0; n < plan.w(); ++n) {
      out[m * stride + n] = static_cast<T>(ar[m * plan.w() + n]);
      residue = std::max(residue, std::abs(ai[m * plan.w() + n]));
    }
  return residue;
}

#define D2NET_INSTANTIATE(T)                                                                          \
  template ComplexGrid<T> dft2_direct(std::span<const T>, std::size_t, std::size_t);                 \
  template ComplexGrid<T> idft2_direct(const ComplexGrid<T>&);                                        \
  template ComplexGrid<T> dft2(std::span<const T>, std::size_t, std::size_t);                        \
  template ComplexGrid<T> idft2(const ComplexGrid<T>&);                                               \
  template std::vector<T> idft2_real(const ComplexGrid<T>&, double);                                  \
  template AmpPhase<T> amp_phase(const ComplexGrid<T>&);                                              \
  template PatchSpectra<T> patchwise_dft(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> patchwise_idft(const PatchSpectra<T>&, double);                                  \
  template void Dft2Plan::forward_real(const T*, std::size_t, double*, double*) const;                \
  template double spectral_product(const Dft2Plan&, const T*, const T*, std::size_t, T*, bool,        \
                                   std::span<double>);

D2NET_INSTANTIATE(float)
D2NET_INSTANTIATE(double)

} // namespace d2net::spectral
