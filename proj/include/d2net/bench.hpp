// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "d2net/blocks.hpp"
#include "d2net/nn_ops.hpp"
#include "d2net/params.hpp"

namespace d2net::bench {

/// Largest H*W for which the naive map is materialized.
inline constexpr std::size_t kNaiveMaxPositions = 4096;

/// Raised when the naive map would exceed kNaiveMaxPositions.
class AttentionRefused : public InputError {
public:
  using InputError::InputError;
};

/// Reference spatial self-attention: 1x1 projections to Q, K, V, then per
/// channel group softmax(Q K^T / sqrt(d)) V over all H*W positions, and a
/// 1x1 output projection. Every head's (HW x HW) map is held at once.
class NaiveAttention {
public:
  NaiveAttention(ParamLayout& layout, const std::string& prefix, std::size_t channels, std::size_t heads);

  std::size_t channels() const { return channels_; }
  std::size_t heads() const { return heads_; }

  /// When `maps` is given it receives the (N * heads, 1, HW, HW) attention maps.
  template <Scalar T>
  Tensor<T> forward(const ModuleParams<T>& p, const Tensor<T>& x, Tensor<T>* maps = nullptr) const;

private:
  std::size_t channels_;
  std::size_t heads_;
  nn::ConvLayer q_, k_, v_, out_;
};

struct ProbeRow {
  std::string label; ///< "fgfe" or "naive"
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t peak_floats = 0;
  bool refused = false;
};

struct ScalingReport {
  std::vector<ProbeRow> rows;
  double fgfe_exponent = 0;  ///< slope of log(peak) against log(HW)
  double naive_exponent = 0;

  /// naive peak / FGFE peak at the given square size; 0 if either is missing.
  double ratio_at(std::size_t side) const;
};

struct ScalingOptions {
  std::size_t channels = 4;
  std::uint64_t seed = 3;
};

/// FGFE configuration used for the probe: the network's block settings at
/// `channels` width.
FemConfig probe_config(std::size_t channels);

/// Peak activation floats of one FGFE inference forward at h x w.
std::size_t fgfe_peak(std::size_t h, std::size_t w, const ScalingOptions& options = {});

/// Peak activation floats of one naive attention forward; throws AttentionRefused past the guard.
std::size_t naive_peak(std::size_t h, std::size_t w, const ScalingOptions& options = {});

/// Measures FGFE over `fgfe_sides` and the naive reference over
/// `naive_sides` (square sizes). Sizes over the naive guard are recorded as
/// refused. Exponents come from least-squares fits over the measured rows.
ScalingReport memory_scaling_report(const std::vector<std::size_t>& fgfe_sides,
                                    const std::vector<std::size_t>& naive_sides, const ScalingOptions& options = {});

/// Least-squares slope of log(y) on log(x).
double loglog_slope(const std::vector<std::pair<double, double>>& xy);

/// CSV columns label,H,W,peak_floats,refused_flag. Two trailing rows,
/// "exponent_fgfe" and "exponent_naive", carry the fitted slope in the
/// peak_floats column with H and W empty.
void write_csv(const ScalingReport& report, std::ostream& os);

} // namespace d2net::bench
