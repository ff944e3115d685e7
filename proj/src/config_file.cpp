// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/config_file.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>

namespace d2net {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> to_sizes(const std::string& key, const std::string& v) {
  std::array<std::size_t, N> out{};
  std::size_t start = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto comma = v.find(',', start);
    const bool last = i + 1 == N;
    if (last != (comma == std::string::npos))
      throw ConfigError("config key '" + key + "': expected " + std::to_string(N) + " comma-separated integers, got '" +
                        v + "'");
    out[i] = to_size(key, trim(v.substr(start, last ? std::string::npos : comma - start)));
    start = comma + 1;
  }
  return out;
}

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

std::string num(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename E>
E to_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> names) {
  std::string options;
  for (const auto& [n, e] : names) {
    if (v == n) return e;
    options += (options.empty() ? "" : "|") + std::string(n);
  }
  throw ConfigError("config key '" + key + "': '" + v + "' is not one of " + options);
}

template <typename E>
const char* enum_name(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (e == value) return n;
  return "?";
}

const std::initializer_list<std::pair<const char*, LatentAt>> kLatent{{"eighth", LatentAt::eighth},
                                                                       {"quarter", LatentAt::quarter}};
const std::initializer_list<std::pair<const char*, NormKind>> kNorm{{"layernorm", NormKind::layernorm},
                                                                     {"none", NormKind::none}};
const std::initializer_list<std::pair<const char*, ConvGroupOrder>> kOrder{
    {"literal", ConvGroupOrder::literal}, {"pointwise_then_dwconv", ConvGroupOrder::pointwise_then_dwconv}};
const std::initializer_list<std::pair<const char*, nn::Boundary>> kBoundary{{"reflect", nn::Boundary::reflect},
                                                                             {"zero", nn::Boundary::zero}};

} // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void apply_key(RunConfig& c, const std::string& key, const std::string& v) {
  NetworkConfig& n = c.network;
  train::TrainConfig& t = c.training;
  const std::map<std::string, std::function<void()>> setters{
      {"in_channels", [&] { n.in_channels = to_size(key, v); }},
      {"base_channels", [&] { n.base_channels = to_size(key, v); }},
      {"level_depths", [&] { n.level_depths = to_sizes<4>(key, v); }},
      {"decoder_depths", [&] { n.decoder_depths = to_sizes<3>(key, v); }},
      {"refine_depth", [&] { n.refine_depth = to_size(key, v); }},
      {"latent_at", [&] { n.latent_at = to_enum(key, v, kLatent); }},
      {"freq_patch", [&] { n.fem.freq_patch = to_size(key, v); }},
      {"r_g", [&] { n.fem.r_g = to_double(key, v); }},
      {"k_s", [&] { n.fem.k_s = to_size(key, v); }},
      {"k_b", [&] { n.fem.k_b = to_size(key, v); }},
      {"ffn_expand", [&] { n.fem.ffn_expand = to_double(key, v); }},
      {"norm", [&] { n.fem.norm = to_enum(key, v, kNorm); }},
      {"conv_group_order", [&] { n.fem.conv_group_order = to_enum(key, v, kOrder); }},
      {"boundary", [&] { n.fem.boundary = to_enum(key, v, kBoundary); }},
      {"iters", [&] { t.iters = to_size(key, v); }},
      {"crop", [&] { t.crop = to_size(key, v); }},
      {"batch", [&] { t.batch = to_size(key, v); }},
      {"eval_every", [&] { t.eval_every = to_size(key, v); }},
      {"heldout_images", [&] { t.heldout_images = to_size(key, v); }},
      {"corpus_images", [&] { t.corpus_images = to_size(key, v); }},
      {"corpus_size", [&] { t.corpus_size = to_size(key, v); }},
      {"base_lr", [&] { t.adam.base_lr = to_double(key, v); }},
      {"beta1", [&] { t.adam.beta1 = to_double(key, v); }},
      {"beta2", [&] { t.adam.beta2 = to_double(key, v); }},
      {"eps", [&] { t.adam.eps = to_double(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config file '" + path + "'");
  for (const auto& [k, v] : parse_key_values(f)) apply_key(base, k, v);
  return base;
}

std::vector<std::pair<std::string, std::string>> describe(const RunConfig& c) {
  const NetworkConfig& n = c.network;
  const train::TrainConfig& t = c.training;
  return {
      {"in_channels", std::to_string(n.in_channels)},
      {"base_channels", std::to_string(n.base_channels)},
      {"level_depths", join(n.level_depths)},
      {"decoder_depths", join(n.decoder_depths)},
      {"refine_depth", std::to_string(n.refine_depth)},
      {"latent_at", enum_name(n.latent_at, kLatent)},
      {"freq_patch", std::to_string(n.fem.freq_patch)},
      {"r_g", num(n.fem.r_g)},
      {"k_s", std::to_string(n.fem.k_s)},
      {"k_b", std::to_string(n.fem.k_b)},
      {"ffn_expand", num(n.fem.ffn_expand)},
      {"norm", enum_name(n.fem.norm, kNorm)},
      {"conv_group_order", enum_name(n.fem.conv_group_order, kOrder)},
      {"boundary", enum_name(n.fem.boundary, kBoundary)},
      {"iters", std::to_string(t.iters)},
      {"crop", std::to_string(t.crop)},
      {"batch", std::to_string(t.batch)},
      {"eval_every", std::to_string(t.eval_every)},
      {"heldout_images", std::to_string(t.heldout_images)},
      {"corpus_images", std::to_string(t.corpus_images)},
      {"corpus_size", std::to_string(t.corpus_size)},
      {"base_lr", num(t.adam.base_lr)},
      {"beta1", num(t.adam.beta1)},
      {"beta2", num(t.adam.beta2)},
      {"eps", num(t.adam.eps)},
  };
}

void print_banner(std::ostream& os, const RunConfig& config,
                  const std::vector<std::pair<std::string, std::string>>& extra) {
  os << "# resolved configuration\n";
  for (const auto& [k, v] : extra) os << "# " << k << " = " << v << '\n';
  for (const auto& [k, v] : describe(config)) os << k << " = " << v << '\n';
}

} // namespace d2net
