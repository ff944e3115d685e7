// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "d2net/blocks.hpp"
#include "d2net/nn_ops.hpp"
#include "d2net/params.hpp"

namespace d2net {

/// Where the latent (level-4) features live.
///  eighth:  three factor-2 downsamples, channel ladder [C, 2C, 4C, 8C]
///  quarter: two downsamples; levels 3 and 4 share resolution H/4 and 4C channels
enum class LatentAt { eighth, quarter };

struct NetworkConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 24;
  std::array<std::size_t, 4> level_depths{2, 4, 4, 6};
  /// FEM count after fusion on decoder levels 1, 2, 3.
  std::array<std::size_t, 3> decoder_depths{2, 4, 4};
  std::size_t refine_depth = 2;
  LatentAt latent_at = LatentAt::quarter;
  FemConfig fem{.channels = 24,
                .freq_patch = 8,
                .r_g = 1.0 / 8.0,
                .k_s = 5,
                .k_b = 11,
                .ffn_expand = 3.0,
                .norm = NormKind::layernorm,
                .conv_group_order = ConvGroupOrder::pointwise_then_dwconv};

  static constexpr std::size_t kLevels = 4;

  std::size_t level_channels(std::size_t level) const;
  /// Spatial reduction factor of a level (1, 2, 4, ...).
  std::size_t level_scale(std::size_t level) const;
  /// Whether moving from `level` to `level + 1` halves the resolution.
  bool downsamples_after(std::size_t level) const;
  /// Inputs are padded to a multiple of this so every level tiles into
  /// whole frequency patches.
  std::size_t pad_multiple() const;

  void validate() const;
};

template <Scalar T>
struct NetworkTrace {
  Tensor<T> input;
  Tensor<T> head_in;
  std::vector<FemTrace<T>> fems;
  std::array<Tensor<T>, 3> down_in;
  std::array<Tensor<T>, 3> up_in;
  std::array<AfmmTrace<T>, 3> fuse;
  Tensor<T> tail_in;
};

/// The restoration network: head conv, 4-level encoder / decoder of FEMs with
/// adaptive skip fusion, refinement FEMs, tail conv, and a global residual.
class D2Net {
public:
  explicit D2Net(const NetworkConfig& config);

  const NetworkConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }

  template <Scalar T>
  ModuleParams<T> init_params(std::uint64_t seed) const {
    return layout_.template instantiate<T>(seed);
  }

  /// Forward on an input whose extents are multiples of pad_multiple().
  /// With a trace, every intermediate needed by backward is kept.
  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& x, NetworkTrace<T>* trace = nullptr) const;

  /// Returns the input gradient; parameter gradients accumulate in `grads`.
  template <Scalar T>
  Tensor<T> backward(const ModuleParams<T>& p, const NetworkTrace<T>& trace, const Tensor<T>& grad_out,
                     ModuleParams<T>& grads) const;

  /// Any-size inference: validates pixel range [0, 1], reflect-pads to the
  /// required multiple, runs the network and crops back.
  template <Scalar T>
  Tensor<T> forward_full_resolution(const ModuleParams<T>& p, const Tensor<T>& x) const;

  const nn::ConvLayer& head() const { return head_; }
  const nn::ConvLayer& tail() const { return tail_; }
  std::size_t fem_count() const;

private:
  NetworkConfig cfg_;
  ParamLayout layout_;
  nn::ConvLayer head_;
  std::array<std::vector<Fem>, 3> encoder_;
  std::array<std::optional<nn::Downsample>, 3> down_;
  std::vector<Fem> latent_;
  std::array<std::optional<nn::Upsample>, 3> up_;
  std::array<Afmm, 3> fuse_;
  std::array<std::vector<Fem>, 3> decoder_;
  std::vector<Fem> refine_;
  nn::ConvLayer tail_;
};

/// Exact number of learnable scalars.
template <Scalar T>
std::size_t count_params(const ModuleParams<T>& params) {
  return params.numel();
}

// ---------------------------------------------------------------------------
// Checkpoint: "D2NT", u32 version = 1, u32 tensor count, then per tensor
// u32 name length, name bytes, u8 dtype (0 = float32), u32 ndim, u32 extents,
// little-endian payload.

class CheckpointError : public Error {
public:
  enum class Kind { bad_magic, bad_version, truncated, bad_dtype, name_mismatch, shape_mismatch, io };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes float32 payloads regardless of T.
template <Scalar T>
void save_checkpoint(const ModuleParams<T>& params, std::ostream& sink);

/// Parses the whole stream before returning; validates every name and shape
/// against `layout`. Nothing is returned on failure. Output is in layout order.
ModuleParams<float> load_checkpoint(std::istream& source, const ParamLayout& layout);

template <Scalar T>
void save_checkpoint_file(const ModuleParams<T>& params, const std::string& path);
ModuleParams<float> load_checkpoint_file(const std::string& path, const ParamLayout& layout);

} // namespace d2net
