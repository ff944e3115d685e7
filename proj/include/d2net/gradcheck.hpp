// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "d2net/params.hpp"
#include "d2net/tensor.hpp"

namespace d2net::gradcheck {

/// central: (f(x+h) - f(x-h)) / 2h.
/// extrapolated: the central differences at h and 2h combined as
/// (4 D(h) - D(2h)) / 3, which cancels the h^2 truncation term.
enum class Difference { central, extrapolated };

struct CheckOptions {
  double step = 1e-4;
  double rel_tol = 1e-4;
  /// Above this many coordinates a seeded random subset of this size is used.
  std::size_t max_coordinates = 256;
  std::uint64_t seed = 7;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator,
  /// with floor = floor_scale * max |analytic| over the checked set. Components
  /// far below the gradient's scale are judged against that scale, where the
  /// O(h^2) truncation of the central difference would otherwise dominate.
  double floor_scale = 1e-2;
  Difference difference = Difference::central;
};

struct CheckReport {
  std::string name;
  double max_rel_err = 0;
  double mean_rel_err = 0;
  std::size_t coordinates = 0;
  std::string worst_coordinate;
  double worst_analytic = 0;
  double worst_numeric = 0;
  double tolerance = 0;
  bool pass = true;
};

/// Central differences of a scalar function over a flat point.
/// `analytic` must have the same length as `point`.
CheckReport finite_diff_check(const std::string& name, const std::function<double(const std::vector<double>&)>& fn,
                              const std::vector<double>& point, const std::vector<double>& analytic,
                              const CheckOptions& options = {});

/// A differentiable computation over named variables (inputs and parameters
/// alike). `backward` returns the vector-Jacobian product of `forward` with
/// grad_out, laid out like `vars`.
struct Problem {
  std::string name;
  ModuleParams<double> vars;
  std::function<Tensor<double>(const ModuleParams<double>&)> forward;
  std::function<ModuleParams<double>(const ModuleParams<double>&, const Tensor<double>&)> backward;
  double rel_tol = 1e-4;
  Difference difference = Difference::central;
};

/// Checks the problem through the scalar loss <r, forward(vars)> for a fixed
/// seeded random r. `fault_scale` multiplies the analytic gradient (1 means
/// untouched); any other value exists to prove the harness detects errors.
CheckReport check_problem(const Problem& problem, CheckOptions options = {}, double fault_scale = 1.0);

enum class Scope { ops, blocks, network };

std::vector<Problem> op_problems(std::uint64_t seed);
std::vector<Problem> block_problems(std::uint64_t seed);
std::vector<Problem> network_problems(std::uint64_t seed);

/// Runs every problem in the scope.
std::vector<CheckReport> run_scope(Scope scope, std::uint64_t seed, double fault_scale = 1.0);

/// Fill every variable with seeded values in [-amplitude, amplitude]; names
/// ending in ".gain" are centered on 1.
void randomize(ModuleParams<double>& vars, std::uint64_t seed, double amplitude = 0.5);

/// One machine-readable row per report: op,max_rel_err,mean_rel_err,verdict.
void write_rows(std::ostream& os, const std::vector<CheckReport>& reports);

} // namespace d2net::gradcheck
