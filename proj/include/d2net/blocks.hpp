// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "d2net/nn_ops.hpp"
#include "d2net/params.hpp"
#include "d2net/tensor.hpp"

namespace d2net {

enum class NormKind { layernorm, none };

/// Order inside the Q/K/V projection group.
///  literal:               1x1 depthwise, then 3x3 full convolution
///  pointwise_then_dwconv: 1x1 pointwise, then 3x3 depthwise convolution
enum class ConvGroupOrder { literal, pointwise_then_dwconv };

struct FemConfig {
  std::size_t channels = 24;
  std::size_t freq_patch = 8;
  double r_g = 1.0 / 8.0;
  std::size_t k_s = 5;
  std::size_t k_b = 11;
  double ffn_expand = 4.0;
  NormKind norm = NormKind::layernorm;
  ConvGroupOrder conv_group_order = ConvGroupOrder::literal;
  nn::Boundary boundary = nn::Boundary::reflect;

  /// Channels per convolution branch of the local block: floor(r_g * C).
  std::size_t branch_channels() const;
  /// Hidden width of the feed-forward block: round(ffn_expand * C).
  std::size_t hidden_channels() const;
  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Copy with a different channel count (used across UNet levels).
  FemConfig with_channels(std::size_t c) const {
    FemConfig out = *this;
    out.channels = c;
    return out;
  }
};

/// Two chained convolutions producing one of Q, K, V.
struct ConvGroup {
  nn::ConvLayer first;
  nn::ConvLayer second;

  static ConvGroup declare(ParamLayout& layout, const std::string& name, const FemConfig& cfg);
};

// ---------------------------------------------------------------------------
// Fourier-domain global block

/// Per patch and channel: Re F^-1(F(Q) .* F(K)), i.e. the circular
/// convolution of the Q and K tiles divided by sqrt(patch^2). Throws
/// SpectralError if the discarded imaginary residue exceeds
/// 1e-6 * max|Q| * max|K|.
template <Scalar T>
Tensor<T> frequency_attention_map(const Tensor<T>& q, const Tensor<T>& k, std::size_t patch);

/// Gradients of frequency_attention_map with respect to Q and K.
template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> frequency_attention_map_backward(const Tensor<T>& grad_map, const Tensor<T>& q,
                                                                 const Tensor<T>& k, std::size_t patch);

template <Scalar T>
struct FgfeTrace {
  Tensor<T> x, q_mid, k_mid, v_mid, q, k, v, map, modulated;
};

class Fgfe {
public:
  Fgfe() = default;
  Fgfe(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg);

  /// out = Conv1x1(V .* frequency_attention_map(Q, K)). With trace == nullptr
  /// intermediates are released as early as possible.
  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& x, FgfeTrace<T>* trace = nullptr) const;

  template <Scalar T>
  Tensor<T> backward(const ModuleParams<T>& p, const FgfeTrace<T>& trace, const Tensor<T>& grad_out,
                     ModuleParams<T>& grads) const;

  template <Scalar T>
  Tensor<T> project(const ModuleParams<T>& p, const ConvGroup& g, const Tensor<T>& x) const;

  const ConvGroup& q() const { return q_; }
  const ConvGroup& k() const { return k_; }
  const ConvGroup& v() const { return v_; }
  const nn::ConvLayer& out() const { return out_; }
  const FemConfig& config() const { return cfg_; }

private:
  FemConfig cfg_;
  ConvGroup q_, k_, v_;
  nn::ConvLayer out_;
};

// ---------------------------------------------------------------------------
// Multi-scale local block: square, horizontal band, vertical band, identity

template <Scalar T>
struct MlfeTrace {
  std::vector<Tensor<T>> parts;
};

class Mlfe {
public:
  Mlfe() = default;
  Mlfe(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg);

  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& x, MlfeTrace<T>* trace = nullptr) const;

  template <Scalar T>
  Tensor<T> backward(const ModuleParams<T>& p, const MlfeTrace<T>& trace, const Tensor<T>& grad_out,
                     ModuleParams<T>& grads) const;

  /// Channel split [g, g, g, C - 3g]; a zero-width identity group is omitted.
  const std::vector<std::size_t>& split_sizes() const { return sizes_; }
  const nn::ConvLayer& square() const { return square_; }
  const nn::ConvLayer& band_w() const { return band_w_; }
  const nn::ConvLayer& band_h() const { return band_h_; }

private:
  FemConfig cfg_;
  std::vector<std::size_t> sizes_;
  nn::ConvLayer square_, band_w_, band_h_;
};

// ---------------------------------------------------------------------------
// Adaptive skip fusion

template <Scalar T>
struct AfmmTrace {
  Tensor<T> enc, dec, a, b, joined, w0, w1;
};

class Afmm {
public:
  Afmm() = default;
  Afmm(ParamLayout& layout, const std::string& prefix, std::size_t channels);

  /// A = Conv0(enc), B = Conv1(dec), (M0, M1) = Conv2([A, B]),
  /// (W0, W1) = softmax_pair(M0, M1), out = A .* W0 + B .* W1.
  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& enc, const Tensor<T>& dec,
                    AfmmTrace<T>* trace = nullptr) const;

  template <Scalar T>
  std::pair<Tensor<T>, Tensor<T>> backward(const ModuleParams<T>& p, const AfmmTrace<T>& trace,
                                           const Tensor<T>& grad_out, ModuleParams<T>& grads) const;

  const nn::ConvLayer& conv0() const { return conv0_; }
  const nn::ConvLayer& conv1() const { return conv1_; }
  const nn::ConvLayer& conv2() const { return conv2_; }

private:
  std::size_t channels_ = 0;
  nn::ConvLayer conv0_, conv1_, conv2_;
};

// ---------------------------------------------------------------------------
// Feed-forward: Conv1x1(GELU(Conv3x3(x))), expanding then restoring width

template <Scalar T>
struct FfnTrace {
  Tensor<T> x, hidden, activated;
};

class Ffn {
public:
  Ffn() = default;
  Ffn(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg);

  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& x, FfnTrace<T>* trace = nullptr) const;

  template <Scalar T>
  Tensor<T> backward(const ModuleParams<T>& p, const FfnTrace<T>& trace, const Tensor<T>& grad_out,
                     ModuleParams<T>& grads) const;

  const nn::ConvLayer& expand() const { return expand_; }
  const nn::ConvLayer& contract() const { return contract_; }

private:
  nn::ConvLayer expand_, contract_;
};

// ---------------------------------------------------------------------------
// Feature extraction module: three pre-norm residual stages
//   x <- x + FGFE(norm1(x)); x <- x + MLFE(norm2(x)); x <- x + FFN(norm3(x))

struct NormLayer {
  ParamRef gain;
  ParamRef offset;
};

template <Scalar T>
struct FemTrace {
  Tensor<T> x0, x1, x2;
  FgfeTrace<T> fgfe;
  MlfeTrace<T> mlfe;
  FfnTrace<T> ffn;
};

class Fem {
public:
  Fem() = default;
  Fem(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg);

  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& x, FemTrace<T>* trace = nullptr) const;

  template <Scalar T>
  Tensor<T> backward(const ModuleParams<T>& p, const FemTrace<T>& trace, const Tensor<T>& grad_out,
                     ModuleParams<T>& grads) const;

  const Fgfe& fgfe() const { return fgfe_; }
  const Mlfe& mlfe() const { return mlfe_; }
  const Ffn& ffn() const { return ffn_; }
  const FemConfig& config() const { return cfg_; }

private:
  template <Scalar T>
  Tensor<T> norm(const ModuleParams<T>& p, std::size_t i, const Tensor<T>& x) const;
  template <Scalar T>
  Tensor<T> norm_backward(const ModuleParams<T>& p, std::size_t i, const Tensor<T>& x, const Tensor<T>& g,
                          ModuleParams<T>& grads) const;

  FemConfig cfg_;
  NormLayer norms_[3];
  Fgfe fgfe_;
  Mlfe mlfe_;
  Ffn ffn_;
};

} // namespace d2net
