// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>

#include "d2net/blocks.hpp"
#include "d2net/network.hpp"
#include "d2net/nn_ops.hpp"

namespace d2net::gradcheck {

namespace {

std::vector<std::size_t> pick_coordinates(std::size_t total, const CheckOptions& options) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (total <= options.max_coordinates) return idx;
  std::mt19937_64 rng(options.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(options.max_coordinates);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Accumulator {
  double floor = 0;
  double sum = 0;
  CheckReport report;

  void add(std::size_t k, const std::string& label, double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / denom;
    sum += rel;
    ++report.coordinates;
    if (k == 0 || rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_coordinate = label;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  CheckReport finish(double tol) {
    report.mean_rel_err = report.coordinates ? sum / static_cast<double>(report.coordinates) : 0.0;
    report.tolerance = tol;
    report.pass = report.max_rel_err <= tol;
    return report;
  }
};

/// `at(offset)` evaluates the function with the coordinate shifted by offset.
template <typename F>
double numeric_derivative(F&& at, double h, Difference scheme) {
  const double d1 = (at(h) - at(-h)) / (2.0 * h);
  if (scheme == Difference::central) return d1;
  const double d2 = (at(2.0 * h) - at(-2.0 * h)) / (4.0 * h);
  return (4.0 * d1 - d2) / 3.0;
}

} // namespace

CheckReport finite_diff_check(const std::string& name, const std::function<double(const std::vector<double>&)>& fn,
                              const std::vector<double>& point, const std::vector<double>& analytic,
                              const CheckOptions& options) {
  if (analytic.size() != point.size()) throw ShapeError("finite_diff_check: gradient length differs from point");
  const auto coords = pick_coordinates(point.size(), options);
  double max_g = 0;
  for (std::size_t i : coords) max_g = std::max(max_g, std::abs(analytic[i]));
  Accumulator acc;
  acc.floor = std::max(options.floor_scale * max_g, std::numeric_limits<double>::min());
  acc.report.name = name;
  std::vector<double> x = point;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const std::size_t i = coords[k];
    const double orig = x[i];
    const double numeric = numeric_derivative(
        [&](double d) {
          x[i] = orig + d;
          return fn(x);
        },
        options.step, options.difference);
    x[i] = orig;
    acc.add(k, "[" + std::to_string(i) + "]", analytic[i], numeric);
  }
  return acc.finish(options.rel_tol);
}

CheckReport check_problem(const Problem& problem, CheckOptions options, double fault_scale) {
  options.rel_tol = problem.rel_tol;
  const Tensor<double> out0 = problem.forward(problem.vars);
  Tensor<double> r(out0.shape());
  {
    std::mt19937_64 rng(options.seed ^ fnv1a(problem.name));
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
  }
  auto loss = [&](const ModuleParams<double>& vars) {
    const Tensor<double> out = problem.forward(vars);
    double s = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += r[i] * out[i];
    return s;
  };
  const ModuleParams<double> grads = problem.backward(problem.vars, r);

  // Flatten (variable, element) pairs into one coordinate space.
  std::vector<std::pair<std::size_t, std::size_t>> flat;
  for (std::size_t v = 0; v < problem.vars.size(); ++v)
    for (std::size_t e = 0; e < problem.vars.at(v).numel(); ++e) flat.emplace_back(v, e);
  const auto coords = pick_coordinates(flat.size(), options);

  double max_g = 0;
  for (std::size_t c : coords) max_g = std::max(max_g, std::abs(grads.at(flat[c].first)[flat[c].second]));
  Accumulator acc;
  acc.floor = std::max(options.floor_scale * max_g, std::numeric_limits<double>::min());
  acc.report.name = problem.name;

  ModuleParams<double> vars = problem.vars;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto [v, e] = flat[coords[k]];
    double& slot = vars.at(v)[e];
    const double orig = slot;
    const double numeric = numeric_derivative(
        [&](double d) {
          slot = orig + d;
          return loss(vars);
        },
        options.step, problem.difference);
    slot = orig;
    const double analytic = grads.at(v)[e] * fault_scale;
    acc.add(k, vars.name(v) + "[" + std::to_string(e) + "]", analytic, numeric);
  }
  return acc.finish(problem.rel_tol);
}

void randomize(ModuleParams<double>& vars, std::uint64_t seed, double amplitude) {
  for (std::size_t v = 0; v < vars.size(); ++v) {
    std::mt19937_64 rng(seed ^ fnv1a(vars.name(v)));
    const std::string& n = vars.name(v);
    const bool gain = n.size() >= 5 && n.compare(n.size() - 5, 5, ".gain") == 0;
    Tensor<double>& t = vars.at(v);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double u = 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
      t[i] = (gain ? 1.0 : 0.0) + amplitude * u;
    }
  }
}

namespace {

using nn::ConvLayer;
using nn::ConvSpec;

constexpr double kOpTol = 1e-6;
constexpr double kBlockTol = 1e-4;

/// Problem over a parameter layout plus extra named inputs appended after it.
/// Layout refs stay valid because inputs come last.
struct LayoutProblem {
  ParamLayout layout;
  std::vector<std::pair<std::string, Shape>> inputs;

  ModuleParams<double> make_vars(std::uint64_t seed) const {
    ModuleParams<double> vars = layout.instantiate<double>(seed);
    for (const auto& [name, shape] : inputs) vars.add(name, Tensor<double>(shape));
    randomize(vars, seed);
    return vars;
  }
};

Problem conv_problem(const std::string& name, ConvSpec spec, Shape x_shape, std::uint64_t seed) {
  auto lp = std::make_shared<LayoutProblem>();
  auto layer = ConvLayer::declare(lp->layout, "conv", spec);
  lp->inputs.emplace_back("x", x_shape);
  const std::size_t xi = lp->layout.size();
  Problem p;
  p.name = name;
  p.vars = lp->make_vars(seed);
  p.rel_tol = kOpTol;
  p.forward = [layer, xi](const ModuleParams<double>& v) { return nn::conv_forward(v, layer, v.at(xi)); };
  p.backward = [layer, xi](const ModuleParams<double>& v, const Tensor<double>& g) {
    auto grads = v.zeros_like();
    grads.at(xi) = nn::conv_backward(v, layer, v.at(xi), g, grads);
    return grads;
  };
  return p;
}

template <typename Fwd, typename Bwd>
Problem pointwise_problem(const std::string& name, std::vector<std::pair<std::string, Shape>> inputs,
                          std::uint64_t seed, Fwd fwd, Bwd bwd) {
  Problem p;
  p.name = name;
  for (const auto& [n, s] : inputs) p.vars.add(n, Tensor<double>(s));
  randomize(p.vars, seed, 1.0);
  p.rel_tol = kOpTol;
  p.forward = fwd;
  p.backward = bwd;
  return p;
}

FemConfig block_config() {
  FemConfig cfg;
  cfg.channels = 4;
  cfg.r_g = 0.25;
  cfg.ffn_expand = 2.0;
  return cfg;
}

NetworkConfig toy_network_config(LatentAt latent) {
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.level_depths = {1, 1, 1, 1};
  cfg.decoder_depths = {1, 1, 1};
  cfg.refine_depth = 1;
  cfg.latent_at = latent;
  cfg.fem.r_g = 0.25;
  cfg.fem.ffn_expand = 2.0;
  return cfg;
}

} // namespace

std::vector<Problem> op_problems(std::uint64_t seed) {
  std::vector<Problem> out;
  const Shape s{1, 2, 4, 5};
  out.push_back(pointwise_problem(
      "add", {{"a", s}, {"b", s}}, seed, [](const ModuleParams<double>& v) { return add(v.at(0), v.at(1)); },
      [](const ModuleParams<double>& v, const Tensor<double>& g) {
        auto gr = v.zeros_like();
        gr.at(0) = g;
        gr.at(1) = g;
        return gr;
      }));
  out.push_back(pointwise_problem(
      "mul", {{"a", s}, {"b", s}}, seed, [](const ModuleParams<double>& v) { return mul(v.at(0), v.at(1)); },
      [](const ModuleParams<double>& v, const Tensor<double>& g) {
        auto gr = v.zeros_like();
        gr.at(0) = mul(g, v.at(1));
        gr.at(1) = mul(g, v.at(0));
        return gr;
      }));
  out.push_back(conv_problem("conv3x3", ConvSpec::full(3, 4, 3), {2, 3, 6, 7}, seed));
  out.push_back(conv_problem("conv1x1", ConvSpec::pointwise(5, 3), {1, 5, 5, 6}, seed));
  out.push_back(conv_problem("dwconv5x5", ConvSpec::dw(3, 5, 5), {1, 3, 6, 6}, seed));
  out.push_back(conv_problem("dwconv1x11_folded", ConvSpec::dw(2, 1, 11), {1, 2, 5, 4}, seed));
  out.push_back(conv_problem("dwconv11x1", ConvSpec::dw(2, 11, 1), {1, 2, 12, 3}, seed));
  {
    ConvSpec zero = ConvSpec::full(2, 3, 3);
    zero.boundary = nn::Boundary::zero;
    out.push_back(conv_problem("conv3x3_zero_boundary", zero, {1, 2, 5, 5}, seed));
  }
  out.push_back(pointwise_problem(
      "gelu", {{"x", {1, 3, 4, 4}}}, seed, [](const ModuleParams<double>& v) { return nn::gelu(v.at(0)); },
      [](const ModuleParams<double>& v, const Tensor<double>& g) {
        auto gr = v.zeros_like();
        gr.at(0) = nn::gelu_backward(v.at(0), g);
        return gr;
      }));
  out.push_back(pointwise_problem(
      "softmax_pair", {{"a", s}, {"b", s}}, seed,
      [](const ModuleParams<double>& v) {
        auto [wa, wb] = nn::softmax_pair(v.at(0), v.at(1));
        return concat_channels(std::span<const Tensor<double>>(std::vector<Tensor<double>>{wa, wb}));
      },
      [](const ModuleParams<double>& v, const Tensor<double>& g) {
        auto [wa, wb] = nn::softmax_pair(v.at(0), v.at(1));
        const std::size_t c = v.at(0).shape().c;
        auto halves = split_channels(g, std::span<const std::size_t>(std::vector<std::size_t>{c, c}));
        auto [ga, gb] = nn::softmax_pair_backward(wa, wb, halves[0], halves[1]);
        auto gr = v.zeros_like();
        gr.at(0) = std::move(ga);
        gr.at(1) = std::move(gb);
        return gr;
      }));
  out.push_back(pointwise_problem(
      "layer_norm", {{"x", {2, 5, 3, 3}}, {"ln.gain", {1, 5, 1, 1}}, {"ln.offset", {1, 5, 1, 1}}}, seed,
      [](const ModuleParams<double>& v) { return nn::layer_norm(v.at(0), v.at(1), v.at(2)); },
      [](const ModuleParams<double>& v, const Tensor<double>& g) {
        auto lg = nn::layer_norm_backward(v.at(0), v.at(1), g);
        auto gr = v.zeros_like();
        gr.at(0) = std::move(lg.input);
        gr.at(1) = std::move(lg.gain);
        gr.at(2) = std::move(lg.offset);
        return gr;
      }));
  out.push_back(pointwise_problem(
      "frequency_attention_map", {{"q", {1, 2, 16, 16}}, {"k", {1, 2, 16, 16}}}, seed,
      [](const ModuleParams<double>& v) { return frequency_attention_map(v.at(0), v.at(1), 8); },
      [](const ModuleParams<double>& v, const Tensor<double>& g) {
        auto [gq, gk] = frequency_attention_map_backward(g, v.at(0), v.at(1), 8);
        auto gr = v.zeros_like();
        gr.at(0) = std::move(gq);
        gr.at(1) = std::move(gk);
        return gr;
      }));
  {
    auto lp = std::make_shared<LayoutProblem>();
    auto layer = nn::Downsample::declare(lp->layout, "down", 3);
    lp->inputs.emplace_back("x", Shape{1, 3, 6, 8});
    const std::size_t xi = lp->layout.size();
    Problem p;
    p.name = "downsample";
    p.vars = lp->make_vars(seed);
    p.rel_tol = kOpTol;
    p.forward = [layer, xi](const ModuleParams<double>& v) { return nn::downsample(v, layer, v.at(xi)); };
    p.backward = [layer, xi](const ModuleParams<double>& v, const Tensor<double>& g) {
      auto gr = v.zeros_like();
      gr.at(xi) = nn::downsample_backward(v, layer, v.at(xi), g, gr);
      return gr;
    };
    out.push_back(std::move(p));
  }
  {
    auto lp = std::make_shared<LayoutProblem>();
    auto layer = nn::Upsample::declare(lp->layout, "up", 4);
    lp->inputs.emplace_back("x", Shape{1, 4, 3, 5});
    const std::size_t xi = lp->layout.size();
    Problem p;
    p.name = "upsample";
    p.vars = lp->make_vars(seed);
    p.rel_tol = kOpTol;
    p.forward = [layer, xi](const ModuleParams<double>& v) { return nn::upsample(v, layer, v.at(xi)); };
    p.backward = [layer, xi](const ModuleParams<double>& v, const Tensor<double>& g) {
      auto gr = v.zeros_like();
      gr.at(xi) = nn::upsample_backward(v, layer, v.at(xi), g, gr);
      return gr;
    };
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

template <typename Block, typename Trace>
Problem unary_block_problem(const std::string& name, std::shared_ptr<LayoutProblem> lp, std::shared_ptr<Block> block,
                            Shape x_shape, std::uint64_t seed) {
  lp->inputs.emplace_back("x", x_shape);
  const std::size_t xi = lp->layout.size();
  Problem p;
  p.name = name;
  p.vars = lp->make_vars(seed);
  p.rel_tol = kBlockTol;
  p.forward = [block, xi](const ModuleParams<double>& v) { return block->forward(v, v.at(xi)); };
  p.backward = [block, xi](const ModuleParams<double>& v, const Tensor<double>& g) {
    Trace trace;
    block->forward(v, v.at(xi), &trace);
    auto gr = v.zeros_like();
    gr.at(xi) = block->backward(v, trace, g, gr);
    return gr;
  };
  return p;
}

} // namespace

std::vector<Problem> block_problems(std::uint64_t seed) {
  std::vector<Problem> out;
  const FemConfig cfg = block_config();
  const Shape x{1, 4, 16, 16};
  for (auto order : {ConvGroupOrder::literal, ConvGroupOrder::pointwise_then_dwconv}) {
    FemConfig c = cfg;
    c.conv_group_order = order;
    auto lp = std::make_shared<LayoutProblem>();
    auto block = std::make_shared<Fgfe>(lp->layout, "fgfe", c);
    out.push_back(unary_block_problem<Fgfe, FgfeTrace<double>>(
        order == ConvGroupOrder::literal ? "fgfe_literal" : "fgfe_pointwise_then_dwconv", lp, block, x, seed));
  }
  {
    auto lp = std::make_shared<LayoutProblem>();
    auto block = std::make_shared<Mlfe>(lp->layout, "mlfe", cfg);
    out.push_back(unary_block_problem<Mlfe, MlfeTrace<double>>("mlfe", lp, block, x, seed));
  }
  {
    auto lp = std::make_shared<LayoutProblem>();
    auto block = std::make_shared<Afmm>(lp->layout, "afmm", 4);
    lp->inputs.emplace_back("enc", x);
    lp->inputs.emplace_back("dec", x);
    const std::size_t ei = lp->layout.size();
    Problem p;
    p.name = "afmm";
    p.vars = lp->make_vars(seed);
    p.rel_tol = kBlockTol;
    p.forward = [block, ei](const ModuleParams<double>& v) { return block->forward(v, v.at(ei), v.at(ei + 1)); };
    p.backward = [block, ei](const ModuleParams<double>& v, const Tensor<double>& g) {
      AfmmTrace<double> trace;
      block->forward(v, v.at(ei), v.at(ei + 1), &trace);
      auto gr = v.zeros_like();
      auto [ge, gd] = block->backward(v, trace, g, gr);
      gr.at(ei) = std::move(ge);
      gr.at(ei + 1) = std::move(gd);
      return gr;
    };
    out.push_back(std::move(p));
  }
  {
    auto lp = std::make_shared<LayoutProblem>();
    auto block = std::make_shared<Ffn>(lp->layout, "ffn", cfg);
    out.push_back(unary_block_problem<Ffn, FfnTrace<double>>("ffn", lp, block, x, seed));
  }
  for (auto norm : {NormKind::layernorm, NormKind::none}) {
    FemConfig c = cfg;
    c.norm = norm;
    auto lp = std::make_shared<LayoutProblem>();
    auto block = std::make_shared<Fem>(lp->layout, "fem", c);
    out.push_back(unary_block_problem<Fem, FemTrace<double>>(norm == NormKind::layernorm ? "fem" : "fem_no_norm", lp,
                                                             block, x, seed));
  }
  return out;
}

std::vector<Problem> network_problems(std::uint64_t seed) {
  std::vector<Problem> out;
  for (auto latent : {LatentAt::quarter, LatentAt::eighth}) {
    auto net = std::make_shared<D2Net>(toy_network_config(latent));
    const std::size_t side = net->config().pad_multiple();
    Problem p;
    p.name = latent == LatentAt::quarter ? "d2net_toy_c4_quarter" : "d2net_toy_c4_eighth";
    p.vars = net->init_params<double>(seed);
    // Parameters keep their fan-in initialization; only the image is random, in unit range.
    ModuleParams<double> image;
    image.add("input", Tensor<double>(Shape{1, 3, side, side}));
    randomize(image, seed, 0.5);
    for (std::size_t i = 0; i < image.at(0).numel(); ++i) image.at(0)[i] += 0.5;
    p.vars.add("input", image.at(0));
    const std::size_t xi = p.vars.size() - 1;
    p.rel_tol = kBlockTol;
    // Shared weights move every patch coherently, so the trilinear spectral
    // product contributes cubic terms the two-point difference cannot resolve
    // at this step.
    p.difference = Difference::extrapolated;
    p.forward = [net, xi](const ModuleParams<double>& v) { return net->forward(v, v.at(xi)); };
    p.backward = [net, xi](const ModuleParams<double>& v, const Tensor<double>& g) {
      NetworkTrace<double> trace;
      net->forward(v, v.at(xi), &trace);
      auto gr = v.zeros_like();
      gr.at(xi) = net->backward(v, trace, g, gr);
      return gr;
    };
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<CheckReport> run_scope(Scope scope, std::uint64_t seed, double fault_scale) {
  std::vector<Problem> problems;
  switch (scope) {
  case Scope::ops:
    problems = op_problems(seed);
    break;
  case Scope::blocks:
    problems = block_problems(seed);
    break;
  case Scope::network:
    problems = network_problems(seed);
    break;
  }
  std::vector<CheckReport> reports;
  CheckOptions options;
  options.seed = seed;
  for (const auto& p : problems) reports.push_back(check_problem(p, options, fault_scale));
  return reports;
}

void write_rows(std::ostream& os, const std::vector<CheckReport>& reports) {
  os << "op,max_rel_err,mean_rel_err,verdict\n";
  for (const auto& r : reports)
    os << r.name << ',' << r.max_rel_err << ',' << r.mean_rel_err << ',' << (r.pass ? "pass" : "fail") << '\n';
}

} // namespace d2net::gradcheck
