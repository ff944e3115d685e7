// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "d2net/image_io.hpp"
#include "support.hpp"

namespace d2net {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome run(const std::string& args) {
  const std::string err_path = ::testing::TempDir() + "/d2net_cli_stderr.txt";
  const std::string cmd = std::string(D2NET_CLI_PATH) + " " + args + " 2>" + err_path;
  Outcome r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_path);
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

// Value of a "key = value" line in `text`.
std::string value_of(const std::string& text, const std::string& key) {
  for (const auto& line : lines_of(text))
    if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
  return {};
}

std::string scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "d2net_cli";
  fs::create_directories(dir);
  return (dir / name).string();
}

Image8 random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Image8 img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  std::mt19937_64 rng(seed);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng());
  return img;
}

// Untrained toy checkpoint (zero tail) plus its config file.
const std::string& identity_checkpoint() {
  static const std::string path = [] {
    const std::string p = scratch("identity.d2nt");
    const Outcome r = run("train-toy --iters 0 --out " + p);
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }();
  return path;
}

// ---------------------------------------------------------------------------
// Argument handling

TEST(Cli, HelpSucceeds) {
  const Outcome r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("restore"), std::string::npos);
}

TEST(Cli, UnknownFlagsAndMissingArgumentsAreUserErrors) {
  EXPECT_EQ(run("selftest --bogus").code, 2);
  EXPECT_EQ(run("--frobnicate selftest").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("metrics --ref x.ppm").code, 2);
  EXPECT_EQ(run("--precision quad selftest").code, 2);
  EXPECT_EQ(run("gradcheck --scope everything").code, 2);
}

TEST(Cli, SelftestPassesAndBannerGoesToStderr) {
  const Outcome r = run("--seed 3 selftest");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  for (const auto& line : lines_of(r.out)) EXPECT_EQ(line.rfind("PASS ", 0), 0u) << line;
  EXPECT_NE(r.err.find("# command = selftest"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("# seed = 3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("base_channels = "), std::string::npos) << r.err;
  EXPECT_EQ(r.out.find("base_channels"), std::string::npos);
}

TEST(Cli, MissingConfigFileIsAUserError) {
  EXPECT_EQ(run("--config " + scratch("absent.cfg") + " selftest").code, 2);
  const std::string bad = scratch("bad.cfg");
  std::ofstream(bad) << "no_such_key = 1\n";
  EXPECT_EQ(run("--config " + bad + " selftest").code, 2);
}

// ---------------------------------------------------------------------------
// restore

TEST(CliRestore, ZeroTailCheckpointIsIdentityOnOddSizes) {
  const std::string ckpt = identity_checkpoint();
  const std::string in = scratch("odd.ppm"), out = scratch("odd_out.ppm");
  write_ppm_file(random_image(77, 61, 5), in);
  const Outcome r = run("--config " + ckpt + ".config restore --input " + in + " --checkpoint " + ckpt + " --output " + out);
  ASSERT_EQ(r.code, 0) << r.err;
  const Image8 restored = read_ppm_file(out);
  EXPECT_EQ(restored.width, 77u);
  EXPECT_EQ(restored.height, 61u);
  EXPECT_EQ(slurp(out), slurp(in));
  EXPECT_GT(std::stoull(value_of(r.out, "peak_activation_floats")), 0u);
}

TEST(CliRestore, RerunsAreByteIdentical) {
  const std::string ckpt = identity_checkpoint();
  const std::string in = scratch("rerun.ppm");
  write_ppm_file(random_image(40, 33, 6), in);
  std::string first;
  for (int i = 0; i < 2; ++i) {
    const std::string out = scratch("rerun_out" + std::to_string(i) + ".ppm");
    ASSERT_EQ(run("--config " + ckpt + ".config restore --input " + in + " --checkpoint " + ckpt + " --output " + out).code, 0);
    if (i == 0) first = slurp(out);
    else EXPECT_EQ(slurp(out), first);
  }
}

TEST(CliRestore, DoublePrecisionAlsoWorks) {
  const std::string ckpt = identity_checkpoint();
  const std::string in = scratch("dbl.ppm"), out = scratch("dbl_out.ppm");
  write_ppm_file(random_image(20, 18, 7), in);
  const Outcome r = run("--precision double --config " + ckpt + ".config restore --input " + in + " --checkpoint " + ckpt +
                    " --output " + out);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out), slurp(in));
}

TEST(CliRestore, UnreadableInputIsAUserError) {
  const std::string ckpt = identity_checkpoint();
  const Outcome r = run("--config " + ckpt + ".config restore --input " + scratch("missing.ppm") + " --checkpoint " + ckpt +
                    " --output " + scratch("never.ppm"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  const std::string garbage = scratch("garbage.ppm");
  std::ofstream(garbage) << "P5\n2 2\n255\nabcd";
  EXPECT_EQ(run("--config " + ckpt + ".config restore --input " + garbage + " --checkpoint " + ckpt + " --output " +
                scratch("never.ppm"))
                .code,
            2);
}

TEST(CliRestore, CheckpointProblemsAreArtifactErrors) {
  const std::string ckpt = identity_checkpoint();
  const std::string in = scratch("ck.ppm");
  write_ppm_file(random_image(16, 16, 8), in);
  // Toy checkpoint against the default architecture.
  Outcome r = run("restore --input " + in + " --checkpoint " + ckpt + " --output " + scratch("never.ppm"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  const std::string bytes = slurp(ckpt);
  const std::string truncated = scratch("truncated.d2nt");
  std::ofstream(truncated, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  r = run("--config " + ckpt + ".config restore --input " + in + " --checkpoint " + truncated + " --output " +
          scratch("never.ppm"));
  EXPECT_EQ(r.code, 3);
  r = run("--config " + ckpt + ".config restore --input " + in + " --checkpoint " + scratch("absent.d2nt") +
          " --output " + scratch("never.ppm"));
  EXPECT_EQ(r.code, 3);
}

// ---------------------------------------------------------------------------
// metrics

TEST(CliMetrics, IdenticalFiles) {
  const std::string a = scratch("same.ppm");
  write_ppm_file(random_image(24, 20, 9), a);
  const Outcome r = run("metrics --ref " + a + " --test " + a);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(value_of(r.out, "psnr"), "identical");
  EXPECT_EQ(std::stod(value_of(r.out, "ssim")), 1.0);
}

TEST(CliMetrics, FixturePairsMatchStoredOracles) {
  std::ifstream in(testing::fixture("metrics_oracle.json"));
  ASSERT_TRUE(in);
  const auto oracle = nlohmann::json::parse(in);
  for (const char* pair : {"pair16", "pair40x48"}) {
    const Outcome r = run("metrics --ref " + testing::fixture(std::string(pair) + "_ref.ppm") + " --test " +
                      testing::fixture(std::string(pair) + "_test.ppm"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(std::stod(value_of(r.out, "psnr")), oracle[pair]["psnr"].get<double>(), 1e-8) << pair;
    EXPECT_NEAR(std::stod(value_of(r.out, "ssim")), oracle[pair]["ssim"].get<double>(), 1e-8) << pair;
  }
}

TEST(CliMetrics, SizeMismatchAndMissingFilesAreUserErrors) {
  const std::string a = scratch("m_a.ppm"), b = scratch("m_b.ppm");
  write_ppm_file(random_image(16, 16, 1), a);
  write_ppm_file(random_image(16, 17, 2), b);
  EXPECT_EQ(run("metrics --ref " + a + " --test " + b).code, 2);
  EXPECT_EQ(run("metrics --ref " + a + " --test " + scratch("absent.ppm")).code, 2);
  const std::string tiny = scratch("m_tiny.ppm");
  write_ppm_file(random_image(8, 8, 3), tiny);
  EXPECT_EQ(run("metrics --ref " + tiny + " --test " + tiny).code, 2);
}

// ---------------------------------------------------------------------------
// gradcheck

TEST(CliGradcheck, BlocksPassWithRows) {
  const Outcome r = run("gradcheck --scope blocks");
  EXPECT_EQ(r.code, 0) << r.err;
  std::size_t rows = 0;
  for (const auto& line : lines_of(r.out))
    if (line.find(",pass") != std::string::npos) ++rows;
  EXPECT_GE(rows, 5u) << r.out;
  EXPECT_NE(r.err.find("gradcheck passed"), std::string::npos);
}

TEST(CliGradcheck, CorruptedBackwardFailsNamingTheWorstOffender) {
  const Outcome r = run("gradcheck --scope ops --corrupt-backward");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("worst offender"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find(",fail"), std::string::npos);
}

// ---------------------------------------------------------------------------
// bench-attn

TEST(CliBench, DefaultSizesGiveLinearExponent) {
  const Outcome r = run("bench-attn");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(r.out);
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines[0], "label,H,W,peak_floats,refused_flag");
  bool found = false;
  for (const auto& line : lines)
    if (line.rfind("exponent_fgfe,,,", 0) == 0) {
      const double e = std::stod(line.substr(16));
      EXPECT_NEAR(e, 1.0, 0.1) << line;
      found = true;
    }
  EXPECT_TRUE(found) << r.out;
  EXPECT_EQ(run("bench-attn").out, r.out);
}

TEST(CliBench, CsvFileAndBadSizes) {
  const std::string csv = scratch("bench.csv");
  const Outcome r = run("bench-attn --sizes 16,32 --naive-sizes 8,16 --csv " + csv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines_of(slurp(csv)).size(), 7u);
  EXPECT_EQ(run("bench-attn --sizes 12").code, 2);
  EXPECT_EQ(run("bench-attn --sizes 0").code, 2);
}

// ---------------------------------------------------------------------------
// train-toy

// Small data directory and a fast config for short CLI runs.
struct SmallTraining {
  std::string data, config;
  SmallTraining() {
    data = scratch("data");
    fs::create_directories(data);
    for (std::size_t i = 0; i < 8; ++i)
      write_ppm_file(random_image(40, 40, 100 + i), data + "/img" + std::to_string(i) + ".ppm");
    config = scratch("small.cfg");
    std::ofstream(config) << "crop = 32\nbatch = 2\neval_every = 2\niters = 5\n";
  }
};

TEST(CliTrain, WritesCheckpointTraceAndConfigDeterministically) {
  const SmallTraining setup;
  std::string first;
  for (int i = 0; i < 2; ++i) {
    const std::string out = scratch("small" + std::to_string(i) + ".d2nt");
    const Outcome r = run("--config " + setup.config + " train-toy --task haze --data " + setup.data + " --iters 3 --out " + out);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(value_of(r.out, "heldout_psnr_gain").empty()) << r.out;
    const auto trace = lines_of(slurp(out + ".csv"));
    ASSERT_EQ(trace.size(), 4u) << "--iters must override the config file";
    EXPECT_EQ(trace[0], "step,lr,loss,eval_psnr,eval_ssim");
    EXPECT_TRUE(fs::exists(out + ".config"));
    if (i == 0) first = slurp(out);
    else EXPECT_EQ(slurp(out), first);
  }
}

TEST(CliTrain, ConfigFileSuppliesIterationsWithoutTheFlag) {
  const SmallTraining setup;
  const std::string out = scratch("cfg_iters.d2nt");
  ASSERT_EQ(run("--config " + setup.config + " train-toy --task blur --data " + setup.data + " --out " + out).code, 0);
  EXPECT_EQ(lines_of(slurp(out + ".csv")).size(), 6u);
}

TEST(CliTrain, InsufficientDataAndBadRequestsAreUserErrors) {
  const std::string few = scratch("few");
  fs::create_directories(few);
  for (std::size_t i = 0; i < 3; ++i) write_ppm_file(random_image(40, 40, i), few + "/img" + std::to_string(i) + ".ppm");
  Outcome r = run("train-toy --data " + few + " --iters 1 --out " + scratch("few.d2nt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("at least 8"), std::string::npos) << r.err;
  EXPECT_EQ(run("train-toy --data " + scratch("no_dir") + " --iters 1 --out " + scratch("x.d2nt")).code, 2);
  EXPECT_EQ(run("train-toy --task denoise --iters 1").code, 2);
  EXPECT_EQ(run("--precision double train-toy --iters 1 --out " + scratch("x.d2nt")).code, 2);
}

} // namespace
} // namespace d2net
