// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "d2net/params.hpp"
#include "d2net/tensor.hpp"

namespace d2net::nn {

enum class Boundary { reflect, zero };

/// Stride-1 "same" convolution. Weights are (out, in, kh, kw), or
/// (channels, 1, kh, kw) when depthwise. Bias is (1, out, 1, 1).
///
/// The reflect boundary mirrors without repeating the edge sample and folds
/// again when the kernel half-width exceeds the extent.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  bool depthwise = false;
  bool bias = true;
  Boundary boundary = Boundary::reflect;

  static ConvSpec full(std::size_t in, std::size_t out, std::size_t k) { return {in, out, k, k, false}; }
  static ConvSpec pointwise(std::size_t in, std::size_t out) { return {in, out, 1, 1, false}; }
  static ConvSpec dw(std::size_t channels, std::size_t kh, std::size_t kw) {
    return {channels, channels, kh, kw, true};
  }

  Shape weight_shape() const { return {out_channels, depthwise ? 1 : in_channels, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {1, out_channels, 1, 1}; }
  std::size_t fan_in() const { return (depthwise ? 1 : in_channels) * kernel_h * kernel_w; }
  std::size_t param_count() const { return weight_shape().numel() + (bias ? out_channels : 0); }

  /// Throws ConfigError when the spec is inconsistent (even kernel, depthwise
  /// with differing channel counts, zero extents).
  void validate(const std::string& layer) const;
};

/// A convolution bound to its parameters in a layout.
struct ConvLayer {
  std::string name;
  ConvSpec spec;
  ParamRef weight;
  ParamRef bias;

  /// Declare "<name>.weight" (and "<name>.bias") in `layout`.
  static ConvLayer declare(ParamLayout& layout, std::string name, ConvSpec spec);
};

template <Scalar T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight, const Tensor<T>* bias,
                 const std::string& layer = "conv2d");

template <Scalar T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Vector-Jacobian product of conv2d. When `input_grad` is false the input
/// gradient is left empty.
template <Scalar T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                             const Tensor<T>& grad_out, bool input_grad = true);

template <Scalar T>
Tensor<T> conv_forward(const ModuleParams<T>& p, const ConvLayer& layer, const Tensor<T>& x) {
  return conv2d(x, layer.spec, p[layer.weight], layer.spec.bias ? &p[layer.bias] : nullptr, layer.name);
}

/// Backward of a bound layer; parameter gradients accumulate into `grads`.
template <Scalar T>
Tensor<T> conv_backward(const ModuleParams<T>& p, const ConvLayer& layer, const Tensor<T>& x,
                        const Tensor<T>& grad_out, ModuleParams<T>& grads, bool input_grad = true);

/// x * Phi(x) with the exact (erf-based) normal CDF.
template <Scalar T>
Tensor<T> gelu(const Tensor<T>& x);

template <Scalar T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

/// Two-way softmax evaluated elementwise: wa = e^a / (e^a + e^b), max-shifted.
template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> softmax_pair(const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> softmax_pair_backward(const Tensor<T>& wa, const Tensor<T>& wb,
                                                      const Tensor<T>& grad_wa, const Tensor<T>& grad_wb);

inline constexpr double kLayerNormEps = 1e-6;

/// Normalizes across channels at every (n, y, x), then applies a per-channel
/// gain and offset, both shaped (1, C, 1, 1).
template <Scalar T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset);

template <Scalar T>
struct LayerNormGrads {
  Tensor<T> input;
  Tensor<T> gain;
  Tensor<T> offset;
};

template <Scalar T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& grad_out);

/// (N, C, H, W) -> (N, 4C, H/2, W/2); channel c*4 + dy*2 + dx holds pixel
/// (2y+dy, 2x+dx) of input channel c.
template <Scalar T>
Tensor<T> space_to_depth(const Tensor<T>& x);

/// Exact inverse of space_to_depth.
template <Scalar T>
Tensor<T> depth_to_space(const Tensor<T>& x);

/// space_to_depth followed by a 1x1 conv 4C -> 2C.
struct Downsample {
  ConvLayer proj;
  static Downsample declare(ParamLayout& layout, std::string name, std::size_t channels);
};

/// 1x1 conv C -> 2C followed by depth_to_space, giving C/2 channels.
struct Upsample {
  ConvLayer proj;
  static Upsample declare(ParamLayout& layout, std::string name, std::size_t channels);
};

template <Scalar T>
Tensor<T> downsample(const ModuleParams<T>& p, const Downsample& layer, const Tensor<T>& x);
template <Scalar T>
Tensor<T> downsample_backward(const ModuleParams<T>& p, const Downsample& layer, const Tensor<T>& x,
                              const Tensor<T>& grad_out, ModuleParams<T>& grads);
template <Scalar T>
Tensor<T> upsample(const ModuleParams<T>& p, const Upsample& layer, const Tensor<T>& x);
template <Scalar T>
Tensor<T> upsample_backward(const ModuleParams<T>& p, const Upsample& layer, const Tensor<T>& x,
                            const Tensor<T>& grad_out, ModuleParams<T>& grads);

} // namespace d2net::nn
