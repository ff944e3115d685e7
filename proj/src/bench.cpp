// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/bench.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "d2net/network.hpp"

namespace d2net::bench {

NaiveAttention::NaiveAttention(ParamLayout& layout, const std::string& prefix, std::size_t channels,
                               std::size_t heads)
    : channels_(channels), heads_(heads) {
  if (channels == 0 || heads == 0 || channels % heads != 0)
    throw ConfigError(prefix + ": heads (" + std::to_string(heads) + ") must divide channels (" +
                      std::to_string(channels) + ")");
  using nn::ConvLayer;
  using nn::ConvSpec;
  q_ = ConvLayer::declare(layout, prefix + ".q", ConvSpec::pointwise(channels, channels));
  k_ = ConvLayer::declare(layout, prefix + ".k", ConvSpec::pointwise(channels, channels));
  v_ = ConvLayer::declare(layout, prefix + ".v", ConvSpec::pointwise(channels, channels));
  out_ = ConvLayer::declare(layout, prefix + ".out", ConvSpec::pointwise(channels, channels));
}

template <Scalar T>
Tensor<T> NaiveAttention::forward(const ModuleParams<T>& p, const Tensor<T>& x, Tensor<T>* maps) const {
  const Shape s = x.shape();
  const std::size_t hw = s.plane();
  if (hw > kNaiveMaxPositions)
    throw AttentionRefused("naive attention refused at " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                           ": the map needs (HW)^2 = " + std::to_string(hw * hw) +
                           " floats per head, quadratic in the number of positions (limit HW <= " +
                           std::to_string(kNaiveMaxPositions) + ")");
  LedgerSection section("naive_attention");
  const std::size_t d = channels_ / heads_;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor<T> q = nn::conv_forward(p, q_, x);
  const Tensor<T> k = nn::conv_forward(p, k_, x);
  const Tensor<T> v = nn::conv_forward(p, v_, x);
  Tensor<T> attended(s);
  if (maps) *maps = Tensor<T>(Shape{s.n * heads_, 1, hw, hw});
  std::vector<double> row(hw);

  for (std::size_t n = 0; n < s.n; ++n) {
    Tensor<T> scores(Shape{1, heads_, hw, hw});
    for (std::size_t h = 0; h < heads_; ++h) {
      T* A = scores.plane(0, h);
      for (std::size_t c = h * d; c < (h + 1) * d; ++c) {
        const T* qc = q.plane(n, c);
        const T* kc = k.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          const T qi = static_cast<T>(qc[i] * inv_sqrt_d);
          T* Ai = A + i * hw;
          for (std::size_t j = 0; j < hw; ++j) Ai[j] += qi * kc[j];
        }
      }
      for (std::size_t i = 0; i < hw; ++i) {
        T* Ai = A + i * hw;
        const double mx = static_cast<double>(*std::max_element(Ai, Ai + hw));
        double sum = 0;
        for (std::size_t j = 0; j < hw; ++j) {
          row[j] = std::exp(static_cast<double>(Ai[j]) - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < hw; ++j) Ai[j] = static_cast<T>(row[j] / sum);
      }
      for (std::size_t c = h * d; c < (h + 1) * d; ++c) {
        const T* vc = v.plane(n, c);
        T* oc = attended.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          const T* Ai = A + i * hw;
          double acc = 0;
          for (std::size_t j = 0; j < hw; ++j) acc += static_cast<double>(Ai[j]) * vc[j];
          oc[i] = static_cast<T>(acc);
        }
      }
      if (maps) std::copy_n(A, hw * hw, maps->plane(n * heads_ + h, 0));
    }
  }
  return nn::conv_forward(p, out_, attended);
}

template Tensor<float> NaiveAttention::forward(const ModuleParams<float>&, const Tensor<float>&,
                                               Tensor<float>*) const;
template Tensor<double> NaiveAttention::forward(const ModuleParams<double>&, const Tensor<double>&,
                                                Tensor<double>*) const;

double ScalingReport::ratio_at(std::size_t side) const {
  std::size_t f = 0, n = 0;
  for (const auto& r : rows) {
    if (r.h != side || r.w != side || r.refused) continue;
    if (r.label == "fgfe") f = r.peak_floats;
    if (r.label == "naive") n = r.peak_floats;
  }
  return f && n ? static_cast<double>(n) / static_cast<double>(f) : 0.0;
}

FemConfig probe_config(std::size_t channels) {
  FemConfig cfg = NetworkConfig{}.fem.with_channels(channels);
  cfg.r_g = 0.25;
  return cfg;
}

namespace {

Tensor<float> probe_input(std::size_t channels, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor<float> x(Shape{1, channels, h, w});
  std::mt19937_64 rng(seed);
  for (float& v : x.data()) v = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53);
  return x;
}

} // namespace

std::size_t fgfe_peak(std::size_t h, std::size_t w, const ScalingOptions& options) {
  ParamLayout layout;
  const Fgfe block(layout, "fgfe", probe_config(options.channels));
  const auto params = layout.instantiate<float>(options.seed);
  const auto x = probe_input(options.channels, h, w, options.seed);
  MemoryLedger ledger;
  {
    LedgerScope scope(ledger);
    const Tensor<float> y = block.forward(params, x);
  }
  return ledger.peak();
}

std::size_t naive_peak(std::size_t h, std::size_t w, const ScalingOptions& options) {
  ParamLayout layout;
  const NaiveAttention block(layout, "naive", options.channels, options.channels);
  const auto params = layout.instantiate<float>(options.seed);
  const auto x = probe_input(options.channels, h, w, options.seed);
  MemoryLedger ledger;
  {
    LedgerScope scope(ledger);
    const Tensor<float> y = block.forward(params, x);
  }
  return ledger.peak();
}

double loglog_slope(const std::vector<std::pair<double, double>>& xy) {
  if (xy.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (const auto& [x, y] : xy) {
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= static_cast<double>(xy.size());
  my /= static_cast<double>(xy.size());
  double sxy = 0, sxx = 0;
  for (const auto& [x, y] : xy) {
    const double dx = std::log(x) - mx;
    sxy += dx * (std::log(y) - my);
    sxx += dx * dx;
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

ScalingReport memory_scaling_report(const std::vector<std::size_t>& fgfe_sides,
                                    const std::vector<std::size_t>& naive_sides, const ScalingOptions& options) {
  ScalingReport report;
  std::vector<std::pair<double, double>> fit_f, fit_n;
  for (std::size_t side : fgfe_sides) {
    const std::size_t peak = fgfe_peak(side, side, options);
    report.rows.push_back({"fgfe", side, side, peak, false});
    fit_f.emplace_back(static_cast<double>(side * side), static_cast<double>(peak));
  }
  for (std::size_t side : naive_sides) {
    try {
      const std::size_t peak = naive_peak(side, side, options);
      report.rows.push_back({"naive", side, side, peak, false});
      fit_n.emplace_back(static_cast<double>(side * side), static_cast<double>(peak));
    } catch (const AttentionRefused&) {
      report.rows.push_back({"naive", side, side, 0, true});
    }
  }
  report.fgfe_exponent = loglog_slope(fit_f);
  report.naive_exponent = loglog_slope(fit_n);
  return report;
}

void write_csv(const ScalingReport& report, std::ostream& os) {
  os << "label,H,W,peak_floats,refused_flag\n";
  for (const auto& r : report.rows)
    os << r.label << ',' << r.h << ',' << r.w << ',' << (r.refused ? std::string() : std::to_string(r.peak_floats))
       << ',' << (r.refused ? 1 : 0) << '\n';
  const auto prec = os.precision(6);
  os << "exponent_fgfe,,," << report.fgfe_exponent << ",0\n";
  os << "exponent_naive,,," << report.naive_exponent << ",0\n";
  os.precision(prec);
}

} // namespace d2net::bench
