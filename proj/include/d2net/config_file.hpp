// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "d2net/network.hpp"
#include "d2net/training.hpp"

namespace d2net {

/// Everything a run can be configured with. Keys mirror field names:
/// network keys (base_channels, level_depths, ...), block keys under the
/// same names as FemConfig (freq_patch, r_g, ...), and training keys
/// (iters, crop, batch, base_lr, eval_every, heldout_images, ...).
struct RunConfig {
  NetworkConfig network;
  train::TrainConfig training;
};

/// Ordered key -> value pairs from `key = value` lines. Blank lines and
/// lines starting with '#' are skipped. Throws ConfigError naming the line
/// on malformed input or duplicate keys.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in);

/// Applies one key. Unknown keys and unparsable values throw ConfigError.
void apply_key(RunConfig& config, const std::string& key, const std::string& value);

RunConfig load_run_config(const std::string& path, RunConfig base = {});

/// Every key with its resolved value, in `key = value` form (readable back by load_run_config).
std::vector<std::pair<std::string, std::string>> describe(const RunConfig& config);

/// Writes describe() lines; `extra` pairs are appended first (seed, precision, subcommand).
void print_banner(std::ostream& os, const RunConfig& config,
                  const std::vector<std::pair<std::string, std::string>>& extra);

} // namespace d2net
