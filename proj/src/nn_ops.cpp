// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <cblas.h>

namespace d2net::nn {

void ConvSpec::validate(const std::string& layer) const {
  auto fail = [&](const std::string& why) { throw ConfigError(layer + ": " + why); };
  if (in_channels == 0 || out_channels == 0) fail("channel counts must be positive");
  if (kernel_h == 0 || kernel_w == 0) fail("kernel extents must be positive");
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) fail("kernel extents must be odd for same padding");
  if (depthwise && in_channels != out_channels) fail("depthwise convolution needs in_channels == out_channels");
}

ConvLayer ConvLayer::declare(ParamLayout& layout, std::string name, ConvSpec spec) {
  spec.validate(name);
  ConvLayer layer{std::move(name), spec, {}, {}};
  layer.weight = layout.declare(layer.name + ".weight", spec.weight_shape(), InitKind::fan_in_uniform, spec.fan_in());
  if (spec.bias) layer.bias = layout.declare(layer.name + ".bias", spec.bias_shape(), InitKind::zeros);
  return layer;
}

namespace {

void check_conv_inputs(const Shape& xs, const ConvSpec& spec, const Shape& ws, const std::string& layer) {
  if (xs.c != spec.in_channels)
    throw ShapeError(layer + ": input has " + std::to_string(xs.c) + " channels, layer expects " +
                     std::to_string(spec.in_channels));
  if (ws != spec.weight_shape())
    throw ShapeError(layer + ": weight shape " + ws.str() + " does not match kernel " + spec.weight_shape().str());
  if (xs.h == 0 || xs.w == 0) throw ShapeError(layer + ": empty spatial extent");
}

/// Copy one plane into a (h + 2ph) x (w + 2pw) buffer with the boundary rule.
template <Scalar T>
void pad_plane(const T* src, std::size_t h, std::size_t w, std::size_t ph, std::size_t pw, Boundary b,
               T* dst) {
  const std::size_t PW = w + 2 * pw;
  const std::size_t PH = h + 2 * ph;
  for (std::size_t py = 0; py < PH; ++py) {
    T* row = dst + py * PW;
    const auto sy = static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(ph);
    const bool inside_y = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h);
    if (b == Boundary::zero && !inside_y) {
      std::fill_n(row, PW, T(0));
      continue;
    }
    const T* srow = src + mirror_index(sy, static_cast<std::ptrdiff_t>(h)) * w;
    for (std::size_t px = 0; px < pw; ++px) {
      const auto sx = static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(pw);
      row[px] = b == Boundary::zero ? T(0) : srow[mirror_index(sx, static_cast<std::ptrdiff_t>(w))];
    }
    std::copy_n(srow, w, row + pw);
    for (std::size_t px = pw + w; px < PW; ++px) {
      const auto sx = static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(pw);
      row[px] = b == Boundary::zero ? T(0) : srow[mirror_index(sx, static_cast<std::ptrdiff_t>(w))];
    }
  }
}

/// Adjoint of pad_plane: scatter-add the padded gradient back onto the plane.
template <Scalar T>
void fold_plane(const T* padded, std::size_t h, std::size_t w, std::size_t ph, std::size_t pw, Boundary b,
                T* dst) {
  const std::size_t PW = w + 2 * pw;
  const std::size_t PH = h + 2 * ph;
  for (std::size_t py = 0; py < PH; ++py) {
    const auto sy = static_cast<std::ptrdiff_t>(py) - static_cast<std::ptrdiff_t>(ph);
    const bool inside_y = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h);
    if (b == Boundary::zero && !inside_y) continue;
    T* drow = dst + mirror_index(sy, static_cast<std::ptrdiff_t>(h)) * w;
    const T* row = padded + py * PW;
    for (std::size_t px = 0; px < PW; ++px) {
      const auto sx = static_cast<std::ptrdiff_t>(px) - static_cast<std::ptrdiff_t>(pw);
      const bool inside_x = sx >= 0 && sx < static_cast<std::ptrdiff_t>(w);
      if (b == Boundary::zero && !inside_x) continue;
      drow[mirror_index(sx, static_cast<std::ptrdiff_t>(w))] += row[px];
    }
  }
}


void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
          std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

/// Column matrix of one sample: row (i, ky, kx), column (y, x).
template <Scalar T>
void im2col(const Tensor<T>& x, std::size_t n, const ConvSpec& spec, T* padded, T* col) {
  const std::size_t H = x.shape().h, W = x.shape().w, kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t ph = kh / 2, pw = kw / 2, PW = W + 2 * pw;
  for (std::size_t i = 0; i < spec.in_channels; ++i) {
    pad_plane(x.plane(n, i), H, W, ph, pw, spec.boundary, padded);
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* dst = col + ((i * kh + ky) * kw + kx) * H * W;
        for (std::size_t y = 0; y < H; ++y) std::copy_n(padded + (y + ky) * PW + kx, W, dst + y * W);
      }
  }
}

/// Adjoint of im2col for one sample, accumulated into `grad`.
template <Scalar T>
void col2im(const T* col, const ConvSpec& spec, std::size_t H, std::size_t W, std::size_t n, T* padded,
            Tensor<T>& grad) {
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t ph = kh / 2, pw = kw / 2, PH = H + 2 * ph, PW = W + 2 * pw;
  for (std::size_t i = 0; i < spec.in_channels; ++i) {
    std::fill_n(padded, PH * PW, T(0));
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* src = col + ((i * kh + ky) * kw + kx) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          T* row = padded + (y + ky) * PW + kx;
          const T* srow = src + y * W;
          for (std::size_t xx = 0; xx < W; ++xx) row[xx] += srow[xx];
        }
      }
    fold_plane(padded, H, W, ph, pw, spec.boundary, grad.plane(n, i));
  }
}

// Dense convolution as one GEMM per sample: out = W (Cout x K) * col (K x HW).
template <Scalar T>
void conv2d_dense(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight, Tensor<T>& out) {
  const std::size_t H = x.shape().h, W = x.shape().w, HW = H * W;
  const std::size_t K = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const bool pointwise = spec.kernel_h == 1 && spec.kernel_w == 1;
  std::vector<T> col(pointwise ? 0 : K * HW);
  std::vector<T> padded(pointwise ? 0 : (H + spec.kernel_h - 1) * (W + spec.kernel_w - 1));
  LedgerCharge scratch(col.size() + padded.size());
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    const T* B = x.plane(n, 0);
    if (!pointwise) {
      im2col(x, n, spec, padded.data(), col.data());
      B = col.data();
    }
    gemm(CblasNoTrans, CblasNoTrans, spec.out_channels, HW, K, weight.raw(), K, B, HW, T(1), out.plane(n, 0), HW);
  }
}

template <Scalar T>
void conv2d_dense_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                           const Tensor<T>& grad_out, ConvGrads<T>& g, bool input_grad) {
  const std::size_t H = x.shape().h, W = x.shape().w, HW = H * W;
  const std::size_t K = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const bool pointwise = spec.kernel_h == 1 && spec.kernel_w == 1;
  std::vector<T> col(pointwise ? 0 : K * HW);
  std::vector<T> gcol(pointwise || !input_grad ? 0 : K * HW);
  std::vector<T> padded(pointwise ? 0 : (H + spec.kernel_h - 1) * (W + spec.kernel_w - 1));
  LedgerCharge scratch(col.size() + gcol.size() + padded.size());
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    const T* G = grad_out.plane(n, 0);
    const T* B = x.plane(n, 0);
    if (!pointwise) {
      im2col(x, n, spec, padded.data(), col.data());
      B = col.data();
    }
    // dW += G (Cout x HW) * B^T (HW x K)
    gemm(CblasNoTrans, CblasTrans, spec.out_channels, K, HW, G, HW, B, HW, T(1), g.weight.raw(), K);
    if (!input_grad) continue;
    if (pointwise) {
      gemm(CblasTrans, CblasNoTrans, K, HW, spec.out_channels, weight.raw(), K, G, HW, T(0), g.input.plane(n, 0),
           HW);
    } else {
      gemm(CblasTrans, CblasNoTrans, K, HW, spec.out_channels, weight.raw(), K, G, HW, T(0), gcol.data(), HW);
      col2im(gcol.data(), spec, H, W, n, padded.data(), g.input);
    }
  }
}
} // namespace

template <Scalar T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight, const Tensor<T>* bias,
                 const std::string& layer) {
  const Shape& xs = x.shape();
  check_conv_inputs(xs, spec, weight.shape(), layer);
  if (bias && bias->shape() != spec.bias_shape())
    throw ShapeError(layer + ": bias shape " + bias->shape().str() + " does not match " + spec.bias_shape().str());

  const std::size_t H = xs.h, W = xs.w, kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t ph = kh / 2, pw = kw / 2;
  const std::size_t PW = W + 2 * pw;
  const bool needs_pad = ph > 0 || pw > 0;
  const std::size_t w_in = spec.depthwise ? 1 : spec.in_channels;

  Tensor<T> out(Shape{xs.n, spec.out_channels, H, W});
  if (!spec.depthwise) {
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t o = 0; o < spec.out_channels; ++o)
        std::fill_n(out.plane(n, o), H * W, bias ? (*bias)[o] : T(0));
    conv2d_dense(x, spec, weight, out);
    D2NET_GUARD_FINITE(out, layer.c_str());
    return out;
  }
  std::vector<T> padded(needs_pad ? (H + 2 * ph) * PW : 0);
  LedgerCharge scratch(padded.size());

  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < spec.out_channels; ++o)
      std::fill_n(out.plane(n, o), H * W, bias ? (*bias)[o] : T(0));
    for (std::size_t i = 0; i < spec.in_channels; ++i) {
      const T* src = x.plane(n, i);
      if (needs_pad) pad_plane(src, H, W, ph, pw, spec.boundary, padded.data());
      const T* P = needs_pad ? padded.data() : src;
      const std::size_t o_begin = spec.depthwise ? i : 0;
      const std::size_t o_end = spec.depthwise ? i + 1 : spec.out_channels;
      for (std::size_t o = o_begin; o < o_end; ++o) {
        const T* wk = weight.raw() + (o * w_in + (spec.depthwise ? 0 : i)) * kh * kw;
        T* op = out.plane(n, o);
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            for (std::size_t y = 0; y < H; ++y) {
              const T* prow = P + (y + ky) * PW + kx;
              T* orow = op + y * W;
              for (std::size_t xx = 0; xx < W; ++xx) orow[xx] += wv * prow[xx];
            }
          }
      }
    }
  }
  D2NET_GUARD_FINITE(out, layer.c_str());
  return out;
}

template <Scalar T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                             const Tensor<T>& grad_out, bool input_grad) {
  const Shape& xs = x.shape();
  check_conv_inputs(xs, spec, weight.shape(), "conv2d_backward");
  const Shape expected{xs.n, spec.out_channels, xs.h, xs.w};
  if (grad_out.shape() != expected)
    throw ShapeError("conv2d_backward: grad_out shape " + grad_out.shape().str() + ", expected " + expected.str());

  const std::size_t H = xs.h, W = xs.w, kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t ph = kh / 2, pw = kw / 2;
  const std::size_t PH = H + 2 * ph, PW = W + 2 * pw;
  const bool needs_pad = ph > 0 || pw > 0;
  const std::size_t w_in = spec.depthwise ? 1 : spec.in_channels;

  ConvGrads<T> g;
  g.weight = Tensor<T>(weight.shape());
  g.bias = Tensor<T>(spec.bias_shape());
  if (input_grad) g.input = Tensor<T>(xs);

  if (!spec.depthwise) {
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t o = 0; o < spec.out_channels; ++o) {
        const T* go = grad_out.plane(n, o);
        double acc = 0;
        for (std::size_t k = 0; k < H * W; ++k) acc += go[k];
        g.bias[o] += static_cast<T>(acc);
      }
    conv2d_dense_backward(x, spec, weight, grad_out, g, input_grad);
    return g;
  }

  std::vector<T> padded(needs_pad ? PH * PW : 0);
  std::vector<T> grad_padded(input_grad ? PH * PW : 0);
  LedgerCharge scratch(padded.size() + grad_padded.size());

  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      const T* go = grad_out.plane(n, o);
      double acc = 0;
      for (std::size_t k = 0; k < H * W; ++k) acc += go[k];
      g.bias[o] += static_cast<T>(acc);
    }
    for (std::size_t i = 0; i < spec.in_channels; ++i) {
      const T* src = x.plane(n, i);
      if (needs_pad) pad_plane(src, H, W, ph, pw, spec.boundary, padded.data());
      const T* P = needs_pad ? padded.data() : src;
      T* GP = nullptr;
      if (input_grad) {
        GP = needs_pad ? grad_padded.data() : g.input.plane(n, i);
        if (needs_pad) std::fill(grad_padded.begin(), grad_padded.end(), T(0));
      }
      const std::size_t o_begin = spec.depthwise ? i : 0;
      const std::size_t o_end = spec.depthwise ? i + 1 : spec.out_channels;
      for (std::size_t o = o_begin; o < o_end; ++o) {
        const std::size_t wbase = (o * w_in + (spec.depthwise ? 0 : i)) * kh * kw;
        const T* wk = weight.raw() + wbase;
        T* gw = g.weight.raw() + wbase;
        const T* go = grad_out.plane(n, o);
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            double acc = 0;
            const T wv = wk[ky * kw + kx];
            for (std::size_t y = 0; y < H; ++y) {
              const T* prow = P + (y + ky) * PW + kx;
              const T* grow = go + y * W;
              T row_acc = 0;
              for (std::size_t xx = 0; xx < W; ++xx) row_acc += grow[xx] * prow[xx];
              acc += row_acc;
              if (GP) {
                T* gprow = GP + (y + ky) * PW + kx;
                for (std::size_t xx = 0; xx < W; ++xx) gprow[xx] += wv * grow[xx];
              }
            }
            gw[ky * kw + kx] += static_cast<T>(acc);
          }
      }
      if (input_grad && needs_pad) fold_plane(grad_padded.data(), H, W, ph, pw, spec.boundary, g.input.plane(n, i));
    }
  }
  return g;
}

template <Scalar T>
Tensor<T> conv_backward(const ModuleParams<T>& p, const ConvLayer& layer, const Tensor<T>& x,
                        const Tensor<T>& grad_out, ModuleParams<T>& grads, bool input_grad) {
  auto g = conv2d_backward(x, layer.spec, p[layer.weight], grad_out, input_grad);
  accumulate(grads[layer.weight], g.weight);
  if (layer.spec.bias) accumulate(grads[layer.bias], g.bias);
  return std::move(g.input);
}

template <Scalar T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  D2NET_GUARD_FINITE(out, "gelu");
  return out;
}

template <Scalar T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("gelu_backward: grad_out shape mismatch");
  Tensor<T> out(x.shape());
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
    out[i] = static_cast<T>(grad_out[i] * (cdf + v * pdf));
  }
  return out;
}

template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> softmax_pair(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("softmax_pair: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> wa(a.shape()), wb(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const T m = std::max(a[i], b[i]);
    const T ea = std::exp(a[i] - m);
    const T eb = std::exp(b[i] - m);
    const T s = ea + eb;
    wa[i] = ea / s;
    wb[i] = eb / s;
  }
  return {std::move(wa), std::move(wb)};
}

template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> softmax_pair_backward(const Tensor<T>& wa, const Tensor<T>& wb,
                                                      const Tensor<T>& grad_wa, const Tensor<T>& grad_wb) {
  if (wa.shape() != grad_wa.shape() || wb.shape() != grad_wb.shape() || wa.shape() != wb.shape())
    throw ShapeError("softmax_pair_backward: shape mismatch");
  Tensor<T> ga(wa.shape()), gb(wa.shape());
  for (std::size_t i = 0; i < wa.numel(); ++i) {
    const T s = (grad_wa[i] - grad_wb[i]) * wa[i] * wb[i];
    ga[i] = s;
    gb[i] = -s;
  }
  return {std::move(ga), std::move(gb)};
}

namespace {

template <Scalar T>
void check_norm_params(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>* offset) {
  const Shape expected{1, x.shape().c, 1, 1};
  if (gain.shape() != expected || (offset && offset->shape() != expected))
    throw ShapeError("layer_norm: gain/offset must have shape " + expected.str() + ", got " + gain.shape().str());
}

} // namespace

template <Scalar T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset) {
  check_norm_params(x, gain, &offset);
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* base = x.plane(n, 0);
    T* obase = out.plane(n, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      double mean = 0;
      for (std::size_t c = 0; c < s.c; ++c) mean += base[c * plane + p];
      mean /= static_cast<double>(s.c);
      double var = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double d = base[c * plane + p] - mean;
        var += d * d;
      }
      var /= static_cast<double>(s.c);
      const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
      for (std::size_t c = 0; c < s.c; ++c)
        obase[c * plane + p] = static_cast<T>((base[c * plane + p] - mean) * rstd * gain[c] + offset[c]);
    }
  }
  D2NET_GUARD_FINITE(out, "layer_norm");
  return out;
}

template <Scalar T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& grad_out) {
  check_norm_params<T>(x, gain, nullptr);
  if (grad_out.shape() != x.shape()) throw ShapeError("layer_norm_backward: grad_out shape mismatch");
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  const auto C = static_cast<double>(s.c);
  LayerNormGrads<T> g{Tensor<T>(s), Tensor<T>(gain.shape()), Tensor<T>(gain.shape())};
  std::vector<double> gain_acc(s.c, 0.0), offset_acc(s.c, 0.0), xhat(s.c), dxhat(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* base = x.plane(n, 0);
    const T* gbase = grad_out.plane(n, 0);
    T* dbase = g.input.plane(n, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      double mean = 0;
      for (std::size_t c = 0; c < s.c; ++c) mean += base[c * plane + p];
      mean /= C;
      double var = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double d = base[c * plane + p] - mean;
        var += d * d;
      }
      var /= C;
      const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
      double sum_d = 0;
      double sum_dx = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double go = gbase[c * plane + p];
        xhat[c] = (base[c * plane + p] - mean) * rstd;
        dxhat[c] = go * gain[c];
        gain_acc[c] += go * xhat[c];
        offset_acc[c] += go;
        sum_d += dxhat[c];
        sum_dx += dxhat[c] * xhat[c];
      }
      for (std::size_t c = 0; c < s.c; ++c)
        dbase[c * plane + p] = static_cast<T>(rstd * (dxhat[c] - sum_d / C - xhat[c] * sum_dx / C));
    }
  }
  for (std::size_t c = 0; c < s.c; ++c) {
    g.gain[c] = static_cast<T>(gain_acc[c]);
    g.offset[c] = static_cast<T>(offset_acc[c]);
  }
  return g;
}

template <Scalar T>
Tensor<T> space_to_depth(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("space_to_depth: extents " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " must be even; pad the input first");
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> out(Shape{s.n, 4 * s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          T* dst = out.plane(n, c * 4 + dy * 2 + dx);
          const T* src = x.plane(n, c);
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(2 * y + dy) * s.w + 2 * xx + dx];
        }
  return out;
}

template <Scalar T>
Tensor<T> depth_to_space(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.c % 4 != 0)
    throw ShapeError("depth_to_space: channel count " + std::to_string(s.c) + " is not a multiple of 4");
  const std::size_t oc = s.c / 4, oh = s.h * 2, ow = s.w * 2;
  Tensor<T> out(Shape{s.n, oc, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < oc; ++c)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const T* src = x.plane(n, c * 4 + dy * 2 + dx);
          T* dst = out.plane(n, c);
          for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t xx = 0; xx < s.w; ++xx) dst[(2 * y + dy) * ow + 2 * xx + dx] = src[y * s.w + xx];
        }
  return out;
}

Downsample Downsample::declare(ParamLayout& layout, std::string name, std::size_t channels) {
  return {ConvLayer::declare(layout, std::move(name), ConvSpec::pointwise(4 * channels, 2 * channels))};
}

Upsample Upsample::declare(ParamLayout& layout, std::string name, std::size_t channels) {
  if (channels % 2 != 0) throw ConfigError(name + ": upsampling needs an even channel count");
  return {ConvLayer::declare(layout, std::move(name), ConvSpec::pointwise(channels, 2 * channels))};
}

template <Scalar T>
Tensor<T> downsample(const ModuleParams<T>& p, const Downsample& layer, const Tensor<T>& x) {
  return conv_forward(p, layer.proj, space_to_depth(x));
}

template <Scalar T>
Tensor<T> downsample_backward(const ModuleParams<T>& p, const Downsample& layer, const Tensor<T>& x,
                              const Tensor<T>& grad_out, ModuleParams<T>& grads) {
  const auto packed = space_to_depth(x);
  return depth_to_space(conv_backward(p, layer.proj, packed, grad_out, grads));
}

template <Scalar T>
Tensor<T> upsample(const ModuleParams<T>& p, const Upsample& layer, const Tensor<T>& x) {
  return depth_to_space(conv_forward(p, layer.proj, x));
}

template <Scalar T>
Tensor<T> upsample_backward(const ModuleParams<T>& p, const Upsample& layer, const Tensor<T>& x,
                            const Tensor<T>& grad_out, ModuleParams<T>& grads) {
  return conv_backward(p, layer.proj, x, space_to_depth(grad_out), grads);
}

#define D2NET_INSTANTIATE(T)                                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>*,            \
                            const std::string&);                                                              \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>&, \
                                        bool);                                                                \
  template Tensor<T> conv_backward(const ModuleParams<T>&, const ConvLayer&, const Tensor<T>&,                \
                                   const Tensor<T>&, ModuleParams<T>&, bool);                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                                   \
  template Tensor<T> gelu_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template std::pair<Tensor<T>, Tensor<T>> softmax_pair(const Tensor<T>&, const Tensor<T>&);                 \
  template std::pair<Tensor<T>, Tensor<T>> softmax_pair_backward(const Tensor<T>&, const Tensor<T>&,         \
                                                                 const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template LayerNormGrads<T> layer_norm_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> space_to_depth(const Tensor<T>&);                                                         \
  template Tensor<T> depth_to_space(const Tensor<T>&);                                                         \
  template Tensor<T> downsample(const ModuleParams<T>&, const Downsample&, const Tensor<T>&);                  \
  template Tensor<T> downsample_backward(const ModuleParams<T>&, const Downsample&, const Tensor<T>&,         \
                                         const Tensor<T>&, ModuleParams<T>&);                                 \
  template Tensor<T> upsample(const ModuleParams<T>&, const Upsample&, const Tensor<T>&);                      \
  template Tensor<T> upsample_backward(const ModuleParams<T>&, const Upsample&, const Tensor<T>&,             \
                                       const Tensor<T>&, ModuleParams<T>&);

D2NET_INSTANTIATE(float)
D2NET_INSTANTIATE(double)

} // namespace d2net::nn
