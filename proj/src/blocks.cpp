// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/blocks.hpp"

#include <algorithm>
#include <cmath>

#include "d2net/spectral.hpp"

namespace d2net {

using nn::ConvLayer;
using nn::ConvSpec;

std::size_t FemConfig::branch_channels() const {
  return static_cast<std::size_t>(std::floor(r_g * static_cast<double>(channels) + 1e-9));
}

std::size_t FemConfig::hidden_channels() const {
  return static_cast<std::size_t>(std::llround(ffn_expand * static_cast<double>(channels)));
}

void FemConfig::validate() const {
  auto fail = [&](const std::string& why) {
    throw ConfigError("FemConfig(channels=" + std::to_string(channels) + "): " + why);
  };
  if (channels == 0) fail("channels must be positive");
  if (freq_patch < 2) fail("freq_patch must be at least 2");
  if (!(r_g > 0.0) || r_g > 1.0 / 3.0 + 1e-12) fail("r_g must lie in (0, 1/3]");
  const std::size_t g = branch_channels();
  if (g == 0) fail("r_g * C < 1 leaves the convolution branches without channels");
  if (3 * g > channels) fail("3 * g exceeds the channel count");
  if (k_s % 2 == 0 || k_b % 2 == 0) fail("kernel sizes k_s and k_b must be odd");
  if (!(ffn_expand > 0.0) || hidden_channels() == 0) fail("ffn_expand must give a positive hidden width");
}

ConvGroup ConvGroup::declare(ParamLayout& layout, const std::string& name, const FemConfig& cfg) {
  const std::size_t c = cfg.channels;
  ConvSpec first, second;
  if (cfg.conv_group_order == ConvGroupOrder::literal) {
    first = ConvSpec::dw(c, 1, 1);
    second = ConvSpec::full(c, c, 3);
  } else {
    first = ConvSpec::pointwise(c, c);
    second = ConvSpec::dw(c, 3, 3);
  }
  first.boundary = second.boundary = cfg.boundary;
  return {ConvLayer::declare(layout, name + ".0", first), ConvLayer::declare(layout, name + ".1", second)};
}

// ---------------------------------------------------------------------------

template <Scalar T>
Tensor<T> frequency_attention_map(const Tensor<T>& q, const Tensor<T>& k, std::size_t patch) {
  if (q.shape() != k.shape())
    throw ShapeError("frequency_attention_map: Q " + q.shape().str() + " and K " + k.shape().str() + " differ");
  const Shape& s = q.shape();
  spectral::require_patch_multiple(s, patch, "frequency_attention_map");
  const double limit = 1e-6 * static_cast<double>(max_abs(q)) * static_cast<double>(max_abs(k));

  Tensor<T> map(s);
  spectral::Dft2Plan plan(patch, patch);
  std::vector<double> scratch(plan.scratch_size());
  LedgerCharge charge(scratch.size());
  double worst = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t ty = 0; ty < s.h / patch; ++ty)
        for (std::size_t tx = 0; tx < s.w / patch; ++tx) {
          const std::size_t off = ty * patch * s.w + tx * patch;
          const double r = spectral::spectral_product(plan, q.plane(n, c) + off, k.plane(n, c) + off, s.w,
                                                      map.plane(n, c) + off, false, scratch);
          worst = std::max(worst, r);
        }
  if (worst > limit)
    throw SpectralError("frequency_attention_map: imaginary residue " + std::to_string(worst) + " exceeds " +
                        std::to_string(limit) + "; spectral path is corrupted");
  D2NET_GUARD_FINITE(map, "frequency_attention_map");
  return map;
}

template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> frequency_attention_map_backward(const Tensor<T>& grad_map, const Tensor<T>& q,
                                                                 const Tensor<T>& k, std::size_t patch) {
  if (grad_map.shape() != q.shape() || q.shape() != k.shape())
    throw ShapeError("frequency_attention_map_backward: shape mismatch");
  const Shape& s = q.shape();
  spectral::require_patch_multiple(s, patch, "frequency_attention_map_backward");
  Tensor<T> gq(s), gk(s);
  spectral::Dft2Plan plan(patch, patch);
  std::vector<double> scratch(plan.scratch_size());
  LedgerCharge charge(scratch.size());
  // The unitary transform's adjoint is its inverse, so the adjoint of
  // "multiply by F(K)" in the spectral domain is "multiply by conj(F(K))":
  // each gradient is a circular cross-correlation with the other operand.
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t ty = 0; ty < s.h / patch; ++ty)
        for (std::size_t tx = 0; tx < s.w / patch; ++tx) {
          const std::size_t off = ty * patch * s.w + tx * patch;
          const T* g = grad_map.plane(n, c) + off;
          spectral::spectral_product(plan, g, k.plane(n, c) + off, s.w, gq.plane(n, c) + off, true, scratch);
          spectral::spectral_product(plan, g, q.plane(n, c) + off, s.w, gk.plane(n, c) + off, true, scratch);
        }
  return {std::move(gq), std::move(gk)};
}

Fgfe::Fgfe(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  q_ = ConvGroup::declare(layout, prefix + ".q", cfg_);
  k_ = ConvGroup::declare(layout, prefix + ".k", cfg_);
  v_ = ConvGroup::declare(layout, prefix + ".v", cfg_);
  ConvSpec out = ConvSpec::pointwise(cfg_.channels, cfg_.channels);
  out_ = ConvLayer::declare(layout, prefix + ".out", out);
}

template <Scalar T>
Tensor<T> Fgfe::project(const ModuleParams<T>& p, const ConvGroup& g, const Tensor<T>& x) const {
  Tensor<T> mid = nn::conv_forward(p, g.first, x);
  return nn::conv_forward(p, g.second, mid);
}

template <Scalar T>
Tensor<T> Fgfe::forward(const ModuleParams<T>& p, const Tensor<T>& x, FgfeTrace<T>* trace) const {
  LedgerSection section("fgfe");
  if (x.shape().c != cfg_.channels)
    throw ShapeError("fgfe: input has " + std::to_string(x.shape().c) + " channels, block expects " +
                     std::to_string(cfg_.channels));
  spectral::require_patch_multiple(x.shape(), cfg_.freq_patch, "fgfe");

  if (trace) {
    trace->x = x;
    trace->q_mid = nn::conv_forward(p, q_.first, x);
    trace->q = nn::conv_forward(p, q_.second, trace->q_mid);
    trace->k_mid = nn::conv_forward(p, k_.first, x);
    trace->k = nn::conv_forward(p, k_.second, trace->k_mid);
    trace->v_mid = nn::conv_forward(p, v_.first, x);
    trace->v = nn::conv_forward(p, v_.second, trace->v_mid);
    trace->map = frequency_attention_map(trace->q, trace->k, cfg_.freq_patch);
    trace->modulated = mul(trace->v, trace->map);
    return nn::conv_forward(p, out_, trace->modulated);
  }

  Tensor<T> map;
  {
    Tensor<T> q = project(p, q_, x);
    Tensor<T> k = project(p, k_, x);
    map = frequency_attention_map(q, k, cfg_.freq_patch);
  }
  {
    Tensor<T> v = project(p, v_, x);
    T* m = map.raw();
    const T* pv = v.raw();
    for (std::size_t i = 0; i < map.numel(); ++i) m[i] *= pv[i];
  }
  return nn::conv_forward(p, out_, map);
}

template <Scalar T>
Tensor<T> Fgfe::backward(const ModuleParams<T>& p, const FgfeTrace<T>& t, const Tensor<T>& grad_out,
                         ModuleParams<T>& grads) const {
  Tensor<T> g_mod = nn::conv_backward(p, out_, t.modulated, grad_out, grads);
  Tensor<T> g_v = mul(g_mod, t.map);
  Tensor<T> g_map = mul(g_mod, t.v);
  auto [g_q, g_k] = frequency_attention_map_backward(g_map, t.q, t.k, cfg_.freq_patch);

  auto group_backward = [&](const ConvGroup& g, const Tensor<T>& mid, const Tensor<T>& grad) {
    Tensor<T> g_mid = nn::conv_backward(p, g.second, mid, grad, grads);
    return nn::conv_backward(p, g.first, t.x, g_mid, grads);
  };
  Tensor<T> g_x = group_backward(q_, t.q_mid, g_q);
  accumulate(g_x, group_backward(k_, t.k_mid, g_k));
  accumulate(g_x, group_backward(v_, t.v_mid, g_v));
  return g_x;
}

// ---------------------------------------------------------------------------

Mlfe::Mlfe(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t g = cfg_.branch_channels();
  sizes_ = {g, g, g};
  if (cfg_.channels > 3 * g) sizes_.push_back(cfg_.channels - 3 * g);
  ConvSpec sq = ConvSpec::dw(g, cfg_.k_s, cfg_.k_s);
  ConvSpec bw = ConvSpec::dw(g, 1, cfg_.k_b);
  ConvSpec bh = ConvSpec::dw(g, cfg_.k_b, 1);
  sq.boundary = bw.boundary = bh.boundary = cfg_.boundary;
  square_ = ConvLayer::declare(layout, prefix + ".square", sq);
  band_w_ = ConvLayer::declare(layout, prefix + ".band_w", bw);
  band_h_ = ConvLayer::declare(layout, prefix + ".band_h", bh);
}

template <Scalar T>
Tensor<T> Mlfe::forward(const ModuleParams<T>& p, const Tensor<T>& x, MlfeTrace<T>* trace) const {
  LedgerSection section("mlfe");
  if (x.shape().c != cfg_.channels)
    throw ShapeError("mlfe: input has " + std::to_string(x.shape().c) + " channels, block expects " +
                     std::to_string(cfg_.channels));
  std::vector<Tensor<T>> parts = split_channels(x, std::span<const std::size_t>(sizes_));
  std::vector<Tensor<T>> outs;
  outs.reserve(parts.size());
  outs.push_back(nn::conv_forward(p, square_, parts[0]));
  outs.push_back(nn::conv_forward(p, band_w_, parts[1]));
  outs.push_back(nn::conv_forward(p, band_h_, parts[2]));
  if (parts.size() == 4) outs.push_back(parts[3]);
  if (trace) {
    trace->parts = std::move(parts);
  } else {
    parts.clear();
  }
  return concat_channels(std::span<const Tensor<T>>(outs));
}

template <Scalar T>
Tensor<T> Mlfe::backward(const ModuleParams<T>& p, const MlfeTrace<T>& t, const Tensor<T>& grad_out,
                         ModuleParams<T>& grads) const {
  std::vector<Tensor<T>> g = split_channels(grad_out, std::span<const std::size_t>(sizes_));
  std::vector<Tensor<T>> gin;
  gin.reserve(g.size());
  gin.push_back(nn::conv_backward(p, square_, t.parts[0], g[0], grads));
  gin.push_back(nn::conv_backward(p, band_w_, t.parts[1], g[1], grads));
  gin.push_back(nn::conv_backward(p, band_h_, t.parts[2], g[2], grads));
  if (g.size() == 4) gin.push_back(std::move(g[3]));
  return concat_channels(std::span<const Tensor<T>>(gin));
}

// ---------------------------------------------------------------------------

Afmm::Afmm(ParamLayout& layout, const std::string& prefix, std::size_t channels) : channels_(channels) {
  if (channels == 0) throw ConfigError(prefix + ": channels must be positive");
  conv0_ = ConvLayer::declare(layout, prefix + ".conv0", ConvSpec::pointwise(channels, channels));
  conv1_ = ConvLayer::declare(layout, prefix + ".conv1", ConvSpec::pointwise(channels, channels));
  conv2_ = ConvLayer::declare(layout, prefix + ".conv2", ConvSpec::pointwise(2 * channels, 2 * channels));
}

template <Scalar T>
Tensor<T> Afmm::forward(const ModuleParams<T>& p, const Tensor<T>& enc, const Tensor<T>& dec,
                        AfmmTrace<T>* trace) const {
  LedgerSection section("afmm");
  if (enc.shape() != dec.shape())
    throw ShapeError("afmm: encoder features " + enc.shape().str() + " and decoder features " + dec.shape().str() +
                     " differ");
  Tensor<T> a = nn::conv_forward(p, conv0_, enc);
  Tensor<T> b = nn::conv_forward(p, conv1_, dec);
  Tensor<T> joined = concat_channels(std::span<const Tensor<T>>(std::vector<Tensor<T>>{a, b}));
  Tensor<T> gates = nn::conv_forward(p, conv2_, joined);
  const std::size_t c = channels_;
  auto halves = split_channels(gates, std::span<const std::size_t>(std::vector<std::size_t>{c, c}));
  gates = Tensor<T>();
  auto [w0, w1] = nn::softmax_pair(halves[0], halves[1]);
  halves.clear();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * w0[i] + b[i] * w1[i];
  if (trace) {
    trace->enc = enc;
    trace->dec = dec;
    trace->a = std::move(a);
    trace->b = std::move(b);
    trace->joined = std::move(joined);
    trace->w0 = std::move(w0);
    trace->w1 = std::move(w1);
  }
  return out;
}

template <Scalar T>
std::pair<Tensor<T>, Tensor<T>> Afmm::backward(const ModuleParams<T>& p, const AfmmTrace<T>& t,
                                               const Tensor<T>& grad_out, ModuleParams<T>& grads) const {
  Tensor<T> g_a = mul(grad_out, t.w0);
  Tensor<T> g_b = mul(grad_out, t.w1);
  Tensor<T> g_w0 = mul(grad_out, t.a);
  Tensor<T> g_w1 = mul(grad_out, t.b);
  auto [g_m0, g_m1] = nn::softmax_pair_backward(t.w0, t.w1, g_w0, g_w1);
  Tensor<T> g_gates = concat_channels(std::span<const Tensor<T>>(std::vector<Tensor<T>>{g_m0, g_m1}));
  Tensor<T> g_joined = nn::conv_backward(p, conv2_, t.joined, g_gates, grads);
  const std::size_t c = channels_;
  auto g_parts = split_channels(g_joined, std::span<const std::size_t>(std::vector<std::size_t>{c, c}));
  accumulate(g_a, g_parts[0]);
  accumulate(g_b, g_parts[1]);
  Tensor<T> g_enc = nn::conv_backward(p, conv0_, t.enc, g_a, grads);
  Tensor<T> g_dec = nn::conv_backward(p, conv1_, t.dec, g_b, grads);
  return {std::move(g_enc), std::move(g_dec)};
}

// ---------------------------------------------------------------------------

Ffn::Ffn(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg) {
  cfg.validate();
  ConvSpec expand = ConvSpec::full(cfg.channels, cfg.hidden_channels(), 3);
  expand.boundary = cfg.boundary;
  expand_ = ConvLayer::declare(layout, prefix + ".expand", expand);
  contract_ = ConvLayer::declare(layout, prefix + ".contract", ConvSpec::pointwise(cfg.hidden_channels(), cfg.channels));
}

template <Scalar T>
Tensor<T> Ffn::forward(const ModuleParams<T>& p, const Tensor<T>& x, FfnTrace<T>* trace) const {
  LedgerSection section("ffn");
  Tensor<T> hidden = nn::conv_forward(p, expand_, x);
  Tensor<T> act = nn::gelu(hidden);
  if (trace) {
    trace->x = x;
    trace->hidden = std::move(hidden);
  } else {
    hidden = Tensor<T>();
  }
  Tensor<T> out = nn::conv_forward(p, contract_, act);
  if (trace) trace->activated = std::move(act);
  return out;
}

template <Scalar T>
Tensor<T> Ffn::backward(const ModuleParams<T>& p, const FfnTrace<T>& t, const Tensor<T>& grad_out,
                        ModuleParams<T>& grads) const {
  Tensor<T> g_act = nn::conv_backward(p, contract_, t.activated, grad_out, grads);
  Tensor<T> g_hidden = nn::gelu_backward(t.hidden, g_act);
  return nn::conv_backward(p, expand_, t.x, g_hidden, grads);
}

// ---------------------------------------------------------------------------

Fem::Fem(ParamLayout& layout, const std::string& prefix, const FemConfig& cfg)
    : cfg_(cfg), fgfe_(layout, prefix + ".fgfe", cfg), mlfe_(layout, prefix + ".mlfe", cfg),
      ffn_(layout, prefix + ".ffn", cfg) {
  if (cfg_.norm == NormKind::layernorm) {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string base = prefix + ".norm" + std::to_string(i + 1);
      const Shape s{1, cfg_.channels, 1, 1};
      norms_[i].gain = layout.declare(base + ".gain", s, InitKind::ones);
      norms_[i].offset = layout.declare(base + ".offset", s, InitKind::zeros);
    }
  }
}

template <Scalar T>
Tensor<T> Fem::norm(const ModuleParams<T>& p, std::size_t i, const Tensor<T>& x) const {
  if (cfg_.norm == NormKind::none) return x;
  return nn::layer_norm(x, p[norms_[i].gain], p[norms_[i].offset]);
}

template <Scalar T>
Tensor<T> Fem::norm_backward(const ModuleParams<T>& p, std::size_t i, const Tensor<T>& x, const Tensor<T>& g,
                             ModuleParams<T>& grads) const {
  if (cfg_.norm == NormKind::none) return g;
  auto lg = nn::layer_norm_backward(x, p[norms_[i].gain], g);
  accumulate(grads[norms_[i].gain], lg.gain);
  accumulate(grads[norms_[i].offset], lg.offset);
  return std::move(lg.input);
}

template <Scalar T>
Tensor<T> Fem::forward(const ModuleParams<T>& p, const Tensor<T>& x, FemTrace<T>* trace) const {
  LedgerSection section("fem");
  if (trace) {
    trace->x0 = x;
    trace->x1 = add(x, fgfe_.forward(p, norm(p, 0, x), &trace->fgfe));
    trace->x2 = add(trace->x1, mlfe_.forward(p, norm(p, 1, trace->x1), &trace->mlfe));
    return add(trace->x2, ffn_.forward(p, norm(p, 2, trace->x2), &trace->ffn));
  }
  Tensor<T> x1 = add(x, fgfe_.forward(p, norm(p, 0, x)));
  Tensor<T> x2 = add(x1, mlfe_.forward(p, norm(p, 1, x1)));
  x1 = Tensor<T>();
  return add(x2, ffn_.forward(p, norm(p, 2, x2)));
}

template <Scalar T>
Tensor<T> Fem::backward(const ModuleParams<T>& p, const FemTrace<T>& t, const Tensor<T>& grad_out,
                        ModuleParams<T>& grads) const {
  Tensor<T> g2 = grad_out;
  accumulate(g2, norm_backward(p, 2, t.x2, ffn_.backward(p, t.ffn, grad_out, grads), grads));
  Tensor<T> g1 = g2;
  accumulate(g1, norm_backward(p, 1, t.x1, mlfe_.backward(p, t.mlfe, g2, grads), grads));
  Tensor<T> g0 = g1;
  accumulate(g0, norm_backward(p, 0, t.x0, fgfe_.backward(p, t.fgfe, g1, grads), grads));
  return g0;
}

#define D2NET_INSTANTIATE(T)                                                                                      \
  template Tensor<T> frequency_attention_map(const Tensor<T>&, const Tensor<T>&, std::size_t);                   \
  template std::pair<Tensor<T>, Tensor<T>> frequency_attention_map_backward(const Tensor<T>&, const Tensor<T>&,  \
                                                                            const Tensor<T>&, std::size_t);      \
  template Tensor<T> Fgfe::project(const ModuleParams<T>&, const ConvGroup&, const Tensor<T>&) const;            \
  template Tensor<T> Fgfe::forward(const ModuleParams<T>&, const Tensor<T>&, FgfeTrace<T>*) const;               \
  template Tensor<T> Fgfe::backward(const ModuleParams<T>&, const FgfeTrace<T>&, const Tensor<T>&,               \
                                    ModuleParams<T>&) const;                                                     \
  template Tensor<T> Mlfe::forward(const ModuleParams<T>&, const Tensor<T>&, MlfeTrace<T>*) const;               \
  template Tensor<T> Mlfe::backward(const ModuleParams<T>&, const MlfeTrace<T>&, const Tensor<T>&,               \
                                    ModuleParams<T>&) const;                                                     \
  template Tensor<T> Afmm::forward(const ModuleParams<T>&, const Tensor<T>&, const Tensor<T>&, AfmmTrace<T>*)    \
      const;                                                                                                     \
  template std::pair<Tensor<T>, Tensor<T>> Afmm::backward(const ModuleParams<T>&, const AfmmTrace<T>&,           \
                                                          const Tensor<T>&, ModuleParams<T>&) const;             \
  template Tensor<T> Ffn::forward(const ModuleParams<T>&, const Tensor<T>&, FfnTrace<T>*) const;                 \
  template Tensor<T> Ffn::backward(const ModuleParams<T>&, const FfnTrace<T>&, const Tensor<T>&,                 \
                                   ModuleParams<T>&) const;                                                      \
  template Tensor<T> Fem::forward(const ModuleParams<T>&, const Tensor<T>&, FemTrace<T>*) const;                 \
  template Tensor<T> Fem::backward(const ModuleParams<T>&, const FemTrace<T>&, const Tensor<T>&,                 \
                                   ModuleParams<T>&) const;

D2NET_INSTANTIATE(float)
D2NET_INSTANTIATE(double)

} // namespace d2net
