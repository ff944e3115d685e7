// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "d2net/memory_ledger.hpp"
#include "d2net/network.hpp"
#include "support.hpp"

namespace d2net {
namespace {

using testing::bitwise_equal;
using testing::random_tensor;

NetworkConfig toy_config(std::size_t c = 8) {
  NetworkConfig cfg;
  cfg.base_channels = c;
  cfg.level_depths = {1, 1, 1, 1};
  cfg.decoder_depths = {1, 1, 1};
  cfg.refine_depth = 1;
  cfg.fem.r_g = 0.25;
  cfg.fem.ffn_expand = 2;
  return cfg;
}

std::size_t golden_param_count() {
  std::ifstream in(std::string(D2NET_GOLDEN_DIR) + "/param_count.txt");
  std::size_t n = 0;
  in >> n;
  return n;
}

std::size_t full_resolution_peak(const D2Net& net, const ModuleParams<float>& p, std::size_t side) {
  const auto x = random_tensor<float>(Shape{1, 3, side, side}, side, 0, 1);
  MemoryLedger ledger;
  LedgerScope scope(ledger);
  (void)net.forward_full_resolution(p, x);
  return ledger.peak();
}

// ---------------------------------------------------------------------------
// Parameter counting

TEST(ParamCount, DefaultConfigMatchesGoldenAndRange) {
  const D2Net net(NetworkConfig{});
  const std::size_t n = count_params(net.init_params<float>(0));
  EXPECT_EQ(n, golden_param_count());
  EXPECT_GE(n, 3'600'000u);
  EXPECT_LE(n, 6'800'000u);
  EXPECT_EQ(n, net.layout().numel());
  EXPECT_EQ(count_params(D2Net(NetworkConfig{}).init_params<float>(7)), n);
}

// Hand tally for C=3, every depth 1, r_g 1/3, 3x3 kernels, FFN width 1x.
// A FEM of width c with branch width g holds
//   Q/K/V: 3 (c^2 + c + 9c + c), out: c^2 + c       -> 4c^2 + 34c
//   local: (9g + g) + (3g + g) + (3g + g)           -> 18g
//   FFN:   9c^2 + c + c^2 + c                        -> 10c^2 + 2c
//   norms: 6c
// so FEM(3, 1) = 270, FEM(6, 2) = 792, FEM(12, 4) = 2592.
// Resampling and fusion: down(3) = 78, down(6) = 300, up(12) = 312,
// up(6) = 84, fuse(12) = 912, fuse(6) = 240, fuse(3) = 66; head = tail = 84.
TEST(ParamCount, SmallConfigMatchesManualTally) {
  NetworkConfig cfg;
  cfg.base_channels = 3;
  cfg.level_depths = {1, 1, 1, 1};
  cfg.decoder_depths = {1, 1, 1};
  cfg.refine_depth = 1;
  cfg.fem.r_g = 1.0 / 3.0;
  cfg.fem.k_s = 3;
  cfg.fem.k_b = 3;
  cfg.fem.ffn_expand = 1;
  const std::size_t fems = 270 + 792 + 2592 + 2592 + 2592 + 792 + 270 + 270;
  const std::size_t glue = 78 + 300 + 312 + 84 + 912 + 240 + 66 + 84 + 84;
  EXPECT_EQ(fems + glue, 12330u);
  EXPECT_EQ(D2Net(cfg).layout().numel(), 12330u);
}

TEST(ParamCount, TooFewChannelsForBranchesIsAConfigError) {
  NetworkConfig cfg = toy_config(2);
  EXPECT_THROW(D2Net{cfg}, ConfigError);
}

// ---------------------------------------------------------------------------
// Forward contract

TEST(Network, ShapePreservedAndFinite) {
  const D2Net net(toy_config());
  const auto p = net.init_params<float>(1);
  const auto x = random_tensor<float>(Shape{1, 3, 64, 64}, 2, 0, 1);
  const auto y = net.forward(p, x);
  ASSERT_EQ(y.shape(), x.shape());
  for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Network, OddSizesRoundTripThroughPadding) {
  const D2Net net(toy_config());
  const auto p = net.init_params<float>(1);
  const auto x = random_tensor<float>(Shape{1, 3, 61, 77}, 3, 0, 1);
  const auto y = net.forward_full_resolution(p, x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(bitwise_equal(net.forward_full_resolution(p, x), y));
}

TEST(Network, ZeroTailIsBitwiseIdentity) {
  const D2Net net(NetworkConfig{});
  auto p = net.init_params<float>(4);
  p[net.tail().weight].fill(0.0f);
  p[net.tail().bias].fill(0.0f);
  const auto x = random_tensor<float>(Shape{1, 3, 45, 38}, 5, 0, 1);
  EXPECT_TRUE(bitwise_equal(net.forward_full_resolution(p, x), x));
}

TEST(Network, UnpaddedForwardRejectsBadExtents) {
  const D2Net net(toy_config());
  const auto p = net.init_params<float>(1);
  EXPECT_THROW((void)net.forward(p, Tensor<float>(Shape{1, 3, 40, 64})), ShapeError);
  EXPECT_THROW((void)net.forward(p, Tensor<float>(Shape{1, 4, 64, 64})), ShapeError);
}

TEST(Network, OutOfRangePixelsAreAnInputError) {
  const D2Net net(toy_config());
  const auto p = net.init_params<float>(1);
  auto x = random_tensor<float>(Shape{1, 3, 16, 16}, 6, 0, 1);
  x[17] = 1.5f;
  EXPECT_THROW((void)net.forward_full_resolution(p, x), InputError);
  x[17] = -0.01f;
  EXPECT_THROW((void)net.forward_full_resolution(p, x), InputError);
}

TEST(Network, DoubleAndFloatAgree) {
  const D2Net net(toy_config());
  const auto pd = net.init_params<double>(8);
  const auto pf = net.init_params<float>(8);
  const auto x = random_tensor<double>(Shape{1, 3, 32, 32}, 9, 0, 1);
  EXPECT_LE(testing::rel_err(net.forward(pf, x.cast<float>()).cast<double>(), net.forward(pd, x)), 1e-4);
}

// ---------------------------------------------------------------------------
// Memory

TEST(NetworkMemory, PeakGrowsLinearlyInArea) {
  const D2Net net(NetworkConfig{});
  const auto p = net.init_params<float>(1);
  const double p32 = static_cast<double>(full_resolution_peak(net, p, 32));
  const double p64 = static_cast<double>(full_resolution_peak(net, p, 64));
  const double p96 = static_cast<double>(full_resolution_peak(net, p, 96));
  const double p128 = static_cast<double>(full_resolution_peak(net, p, 128));

  const double ratio = p128 / p64;
  EXPECT_GE(ratio, 3.8);
  EXPECT_LE(ratio, 4.3);

  // a*HW + b fitted at 32^2 and 96^2, checked at 64^2; extrapolated to 128^2.
  const double a = (p96 - p32) / (96.0 * 96 - 32.0 * 32);
  const double b = p32 - a * 32 * 32;
  EXPECT_LT(std::abs(a * 64 * 64 + b - p64) / p64, 0.05);
  EXPECT_LT(std::abs(a * 128 * 128 + b - p128) / p128, 0.05);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string serialize(const ModuleParams<float>& p) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(p, os);
  return os.str();
}

CheckpointError::Kind load_error(const std::string& bytes, const ParamLayout& layout, std::string* what = nullptr) {
  std::istringstream is(bytes, std::ios::binary);
  try {
    (void)load_checkpoint(is, layout);
  } catch (const CheckpointError& e) {
    if (what) *what = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "checkpoint unexpectedly loaded";
  return CheckpointError::Kind::io;
}

bool params_bitwise_equal(const ModuleParams<float>& a, const ModuleParams<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.name(i) != b.name(i) || !bitwise_equal(a.at(i), b.at(i))) return false;
  return true;
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const D2Net net(NetworkConfig{});
  const auto p = net.init_params<float>(11);
  const std::string bytes = serialize(p);
  std::istringstream is(bytes, std::ios::binary);
  EXPECT_TRUE(params_bitwise_equal(load_checkpoint(is, net.layout()), p));
  EXPECT_EQ(serialize(p), bytes);
}

TEST(Checkpoint, HeaderLayout) {
  const D2Net net(toy_config());
  const auto p = net.init_params<float>(1);
  const std::string bytes = serialize(p);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "D2NT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(bytes.substr(5, 3), std::string(3, '\0'));
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  EXPECT_EQ(count, p.size());
}

TEST(Checkpoint, DoubleParamsAreStoredAsFloat) {
  const D2Net net(toy_config());
  const auto pd = net.init_params<double>(2);
  std::ostringstream os(std::ios::binary);
  save_checkpoint(pd, os);
  std::istringstream is(os.str(), std::ios::binary);
  EXPECT_TRUE(params_bitwise_equal(load_checkpoint(is, net.layout()), pd.cast<float>()));
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const D2Net net(toy_config());
  const std::string bytes = serialize(net.init_params<float>(3));
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 3) {
    const auto kind = load_error(bytes.substr(0, cut), net.layout());
    EXPECT_TRUE(kind == CheckpointError::Kind::truncated || kind == CheckpointError::Kind::bad_magic) << cut;
  }
  EXPECT_EQ(load_error(bytes.substr(0, bytes.size() - 1), net.layout()), CheckpointError::Kind::truncated);
}

TEST(Checkpoint, BadMagicVersionAndDtype) {
  const D2Net net(toy_config());
  const std::string bytes = serialize(net.init_params<float>(3));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(load_error(bad, net.layout()), CheckpointError::Kind::bad_magic);
  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(load_error(bad, net.layout()), CheckpointError::Kind::bad_version);
  // First tensor: name length at 12, name, then the dtype byte.
  bad = bytes;
  const std::size_t len = static_cast<unsigned char>(bytes[12]);
  bad[16 + len] = 1;
  EXPECT_EQ(load_error(bad, net.layout()), CheckpointError::Kind::bad_dtype);
}

TEST(Checkpoint, WiderNetworkNamesOffendingTensor) {
  NetworkConfig narrow;
  NetworkConfig wide;
  wide.base_channels = 32;
  const std::string bytes = serialize(D2Net(narrow).init_params<float>(1));
  std::string what;
  EXPECT_EQ(load_error(bytes, D2Net(wide).layout(), &what), CheckpointError::Kind::shape_mismatch);
  EXPECT_NE(what.find("'head.weight'"), std::string::npos) << what;
}

TEST(Checkpoint, ForeignAndMissingTensors) {
  const D2Net small(toy_config());
  NetworkConfig deeper = toy_config();
  deeper.refine_depth = 2;
  const D2Net big(deeper);
  std::string what;
  EXPECT_EQ(load_error(serialize(big.init_params<float>(1)), small.layout(), &what),
            CheckpointError::Kind::name_mismatch);
  EXPECT_NE(what.find("refine.1"), std::string::npos) << what;
  EXPECT_EQ(load_error(serialize(small.init_params<float>(1)), big.layout(), &what),
            CheckpointError::Kind::name_mismatch);
  EXPECT_NE(what.find("lacks"), std::string::npos) << what;
}

TEST(Checkpoint, FailedLoadLeavesCallerStateUntouched) {
  const D2Net net(toy_config());
  auto live = net.init_params<float>(5);
  const auto before = live.cast<float>();
  const std::string bytes = serialize(net.init_params<float>(6));
  std::istringstream is(bytes.substr(0, bytes.size() / 2), std::ios::binary);
  EXPECT_THROW(live = load_checkpoint(is, net.layout()), CheckpointError);
  EXPECT_TRUE(params_bitwise_equal(live, before));
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  const D2Net net(toy_config());
  const auto p = net.init_params<float>(7);
  const std::string path = ::testing::TempDir() + "/d2net_ckpt_test.d2nt";
  save_checkpoint_file(p, path);
  EXPECT_TRUE(params_bitwise_equal(load_checkpoint_file(path, net.layout()), p));
  try {
    (void)load_checkpoint_file(path + ".absent", net.layout());
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
  }
}

} // namespace
} // namespace d2net
