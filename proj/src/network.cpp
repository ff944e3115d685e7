// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace d2net {

using nn::ConvLayer;
using nn::ConvSpec;

std::size_t NetworkConfig::level_channels(std::size_t level) const {
  std::size_t c = base_channels;
  for (std::size_t l = 0; l < level; ++l)
    if (downsamples_after(l)) c *= 2;
  return c;
}

std::size_t NetworkConfig::level_scale(std::size_t level) const {
  std::size_t s = 1;
  for (std::size_t l = 0; l < level; ++l)
    if (downsamples_after(l)) s *= 2;
  return s;
}

bool NetworkConfig::downsamples_after(std::size_t level) const {
  if (level >= kLevels - 1) return false;
  return latent_at == LatentAt::eighth || level < 2;
}

std::size_t NetworkConfig::pad_multiple() const { return fem.freq_patch * level_scale(kLevels - 1); }

void NetworkConfig::validate() const {
  if (in_channels == 0) throw ConfigError("NetworkConfig: in_channels must be positive");
  if (base_channels == 0) throw ConfigError("NetworkConfig: base_channels must be positive");
  for (std::size_t l = 0; l < kLevels; ++l) fem.with_channels(level_channels(l)).validate();
}

D2Net::D2Net(const NetworkConfig& config) : cfg_(config) {
  cfg_.validate();
  cfg_.fem.channels = cfg_.base_channels;
  const std::size_t C = cfg_.base_channels;
  ConvSpec head = ConvSpec::full(cfg_.in_channels, C, 3);
  head.boundary = cfg_.fem.boundary;
  head_ = ConvLayer::declare(layout_, "head", head);

  auto stack = [&](std::vector<Fem>& out, const std::string& name, std::size_t depth, std::size_t level) {
    const FemConfig fc = cfg_.fem.with_channels(cfg_.level_channels(level));
    for (std::size_t i = 0; i < depth; ++i) out.emplace_back(layout_, name + "." + std::to_string(i), fc);
  };

  for (std::size_t l = 0; l < 3; ++l) {
    stack(encoder_[l], "enc" + std::to_string(l + 1), cfg_.level_depths[l], l);
    if (cfg_.downsamples_after(l))
      down_[l] = nn::Downsample::declare(layout_, "down" + std::to_string(l + 1), cfg_.level_channels(l));
  }
  stack(latent_, "latent", cfg_.level_depths[3], 3);
  for (std::size_t l = 3; l-- > 0;) {
    if (cfg_.downsamples_after(l))
      up_[l] = nn::Upsample::declare(layout_, "up" + std::to_string(l + 1), cfg_.level_channels(l + 1));
    fuse_[l] = Afmm(layout_, "fuse" + std::to_string(l + 1), cfg_.level_channels(l));
    stack(decoder_[l], "dec" + std::to_string(l + 1), cfg_.decoder_depths[l], l);
  }
  stack(refine_, "refine", cfg_.refine_depth, 0);
  ConvSpec tail = ConvSpec::full(C, cfg_.in_channels, 3);
  tail.boundary = cfg_.fem.boundary;
  tail_ = ConvLayer::declare(layout_, "tail", tail);
}

std::size_t D2Net::fem_count() const {
  std::size_t n = latent_.size() + refine_.size();
  for (std::size_t l = 0; l < 3; ++l) n += encoder_[l].size() + decoder_[l].size();
  return n;
}

template <Scalar T>
Tensor<T> D2Net::forward(const ModuleParams<T>& p, const Tensor<T>& x, NetworkTrace<T>* trace) const {
  LedgerSection section("d2net");
  const Shape& s = x.shape();
  const std::size_t m = cfg_.pad_multiple();
  if (s.c != cfg_.in_channels)
    throw ShapeError("d2net: input has " + std::to_string(s.c) + " channels, expected " +
                     std::to_string(cfg_.in_channels));
  if (s.h % m != 0 || s.w % m != 0)
    throw ShapeError("d2net: extents " + std::to_string(s.h) + "x" + std::to_string(s.w) + " must be multiples of " +
                     std::to_string(m) + "; use forward_full_resolution or pad first");

  std::size_t fem_index = 0;
  auto run_fems = [&](const std::vector<Fem>& fems, Tensor<T> f) {
    for (const auto& fem : fems) {
      if (trace) {
        f = fem.forward(p, f, &trace->fems[fem_index]);
      } else {
        f = fem.forward(p, f);
      }
      ++fem_index;
    }
    return f;
  };
  if (trace) {
    trace->input = x;
    trace->head_in = x;
    trace->fems.assign(fem_count(), FemTrace<T>{});
  }

  Tensor<T> f = nn::conv_forward(p, head_, x);
  std::array<Tensor<T>, 3> skips;
  for (std::size_t l = 0; l < 3; ++l) {
    f = run_fems(encoder_[l], std::move(f));
    skips[l] = f;
    if (down_[l]) {
      if (trace) trace->down_in[l] = f;
      f = nn::downsample(p, *down_[l], f);
    }
  }
  f = run_fems(latent_, std::move(f));
  for (std::size_t l = 3; l-- > 0;) {
    if (up_[l]) {
      if (trace) trace->up_in[l] = f;
      f = nn::upsample(p, *up_[l], f);
    }
    f = fuse_[l].forward(p, skips[l], f, trace ? &trace->fuse[l] : nullptr);
    skips[l] = Tensor<T>();
    f = run_fems(decoder_[l], std::move(f));
  }
  f = run_fems(refine_, std::move(f));
  if (trace) trace->tail_in = f;
  Tensor<T> residual = nn::conv_forward(p, tail_, f);
  f = Tensor<T>();
  accumulate(residual, x);
  return residual;
}

template <Scalar T>
Tensor<T> D2Net::backward(const ModuleParams<T>& p, const NetworkTrace<T>& t, const Tensor<T>& grad_out,
                          ModuleParams<T>& grads) const {
  if (grad_out.shape() != t.input.shape())
    throw ShapeError("d2net backward: grad_out shape " + grad_out.shape().str() + ", expected " +
                     t.input.shape().str());
  std::size_t fem_index = t.fems.size();
  auto back_fems = [&](const std::vector<Fem>& fems, Tensor<T> g) {
    for (std::size_t i = fems.size(); i-- > 0;) {
      --fem_index;
      g = fems[i].backward(p, t.fems[fem_index], g, grads);
    }
    return g;
  };

  Tensor<T> g = nn::conv_backward(p, tail_, t.tail_in, grad_out, grads);
  g = back_fems(refine_, std::move(g));
  std::array<Tensor<T>, 3> g_skips;
  for (std::size_t l = 0; l < 3; ++l) {
    g = back_fems(decoder_[l], std::move(g));
    auto [g_enc, g_dec] = fuse_[l].backward(p, t.fuse[l], g, grads);
    g_skips[l] = std::move(g_enc);
    g = std::move(g_dec);
    if (up_[l]) g = nn::upsample_backward(p, *up_[l], t.up_in[l], g, grads);
  }
  g = back_fems(latent_, std::move(g));
  for (std::size_t l = 3; l-- > 0;) {
    if (down_[l]) g = nn::downsample_backward(p, *down_[l], t.down_in[l], g, grads);
    accumulate(g, g_skips[l]);
    g = back_fems(encoder_[l], std::move(g));
  }
  Tensor<T> g_in = nn::conv_backward(p, head_, t.head_in, g, grads);
  accumulate(g_in, grad_out);
  return g_in;
}

template <Scalar T>
Tensor<T> D2Net::forward_full_resolution(const ModuleParams<T>& p, const Tensor<T>& x) const {
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!(x[i] >= T(0) && x[i] <= T(1)))
      throw InputError("forward_full_resolution: pixel values must lie in [0, 1]; found " + std::to_string(x[i]) +
                       " at flat index " + std::to_string(i));
  const Shape& s = x.shape();
  const std::size_t m = cfg_.pad_multiple();
  const std::size_t bottom = (m - s.h % m) % m;
  const std::size_t right = (m - s.w % m) % m;
  if (bottom == 0 && right == 0) return forward(p, x);
  Tensor<T> y = forward(p, pad_reflect(x, bottom, right));
  return crop(y, s.h, s.w);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'D', '2', 'N', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

class Reader {
public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw CheckpointError(CheckpointError::Kind::truncated, std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

private:
  std::istream& is_;
};

} // namespace

template <Scalar T>
void save_checkpoint(const ModuleParams<T>& params, std::ostream& sink) {
  sink.write(kMagic, 4);
  put_u32(sink, kCheckpointVersion);
  put_u32(sink, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const Tensor<T>& t = params.at(i);
    put_u32(sink, static_cast<std::uint32_t>(name.size()));
    sink.write(name.data(), static_cast<std::streamsize>(name.size()));
    sink.put(0);
    put_u32(sink, 4);
    for (std::size_t e : {t.shape().n, t.shape().c, t.shape().h, t.shape().w}) put_u32(sink, static_cast<std::uint32_t>(e));
    for (std::size_t k = 0; k < t.numel(); ++k) put_u32(sink, std::bit_cast<std::uint32_t>(static_cast<float>(t[k])));
  }
  if (!sink) throw CheckpointError(CheckpointError::Kind::io, "checkpoint write failed");
}

ModuleParams<float> load_checkpoint(std::istream& source, const ParamLayout& layout) {
  using Kind = CheckpointError::Kind;
  Reader r(source);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(Kind::bad_magic, "not a D2NT checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::bad_version, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");

  std::unordered_map<std::string, std::size_t> expected;
  for (std::size_t i = 0; i < layout.size(); ++i) expected.emplace(layout.entries()[i].name, i);

  std::vector<std::optional<Tensor<float>>> slots(layout.size());
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    if (len > (1u << 16)) throw CheckpointError(Kind::truncated, "implausible name length " + std::to_string(len));
    std::string name(len, '\0');
    r.bytes(name.data(), len, "name");
    unsigned char dtype = 0;
    r.bytes(&dtype, 1, "dtype");
    if (dtype != 0) throw CheckpointError(Kind::bad_dtype, "tensor '" + name + "' has unsupported dtype tag " + std::to_string(dtype));
    const std::uint32_t ndim = r.u32("ndim");
    if (ndim > 4) throw CheckpointError(Kind::shape_mismatch, "tensor '" + name + "' has " + std::to_string(ndim) + " dims");
    std::size_t ext[4] = {1, 1, 1, 1};
    for (std::uint32_t d = 0; d < ndim; ++d) ext[4 - ndim + d] = r.u32("extent");
    const Shape shape{ext[0], ext[1], ext[2], ext[3]};

    auto it = expected.find(name);
    if (it == expected.end())
      throw CheckpointError(Kind::name_mismatch, "checkpoint tensor '" + name + "' is not part of this network");
    const auto& entry = layout.entries()[it->second];
    if (entry.shape != shape)
      throw CheckpointError(Kind::shape_mismatch, "tensor '" + name + "' has shape " + shape.str() +
                                                      " in the checkpoint but " + entry.shape.str() + " in the network");
    if (slots[it->second]) throw CheckpointError(Kind::name_mismatch, "tensor '" + name + "' appears twice");

    std::vector<float> values(shape.numel());
    for (auto& v : values) v = std::bit_cast<float>(r.u32("payload"));
    slots[it->second] = Tensor<float>(shape, std::move(values));
  }
  ModuleParams<float> out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!slots[i])
      throw CheckpointError(Kind::name_mismatch, "checkpoint lacks tensor '" + layout.entries()[i].name + "'");
    out.add(layout.entries()[i].name, std::move(*slots[i]));
  }
  return out;
}

template <Scalar T>
void save_checkpoint_file(const ModuleParams<T>& params, const std::string& path) {
  std::ostringstream buffer;
  save_checkpoint(params, buffer);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "' for writing");
  const std::string bytes = buffer.str();
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "write to '" + path + "' failed");
}

ModuleParams<float> load_checkpoint_file(const std::string& path, const ParamLayout& layout) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint '" + path + "'");
  return load_checkpoint(is, layout);
}

#define D2NET_INSTANTIATE(T)                                                                                    \
  template Tensor<T> D2Net::forward(const ModuleParams<T>&, const Tensor<T>&, NetworkTrace<T>*) const;         \
  template Tensor<T> D2Net::backward(const ModuleParams<T>&, const NetworkTrace<T>&, const Tensor<T>&,         \
                                     ModuleParams<T>&) const;                                                   \
  template Tensor<T> D2Net::forward_full_resolution(const ModuleParams<T>&, const Tensor<T>&) const;           \
  template void save_checkpoint(const ModuleParams<T>&, std::ostream&);                                        \
  template void save_checkpoint_file(const ModuleParams<T>&, const std::string&);

D2NET_INSTANTIATE(float)
D2NET_INSTANTIATE(double)

} // namespace d2net
