// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "d2net/image_io.hpp"
#include "d2net/metrics.hpp"
#include "support.hpp"

namespace d2net::metrics {
namespace {

using testing::random_tensor;

double psnr_oracle(const Tensor<double>& a, const Tensor<double>& b, double peak) {
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(a.numel())));
}

// Direct per-window SSIM with a 2-D Gaussian weight table.
double ssim_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const Shape s = a.shape();
  double w2[11][11], norm = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w2[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      norm += w2[i][j];
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0;
      std::size_t count = 0;
      for (std::size_t y = 0; y + 11 <= s.h; ++y)
        for (std::size_t x = 0; x + 11 <= s.w; ++x) {
          double ua = 0, ub = 0, saa = 0, sbb = 0, sab = 0;
          for (std::size_t i = 0; i < 11; ++i)
            for (std::size_t j = 0; j < 11; ++j) {
              const double w = w2[i][j] / norm;
              const double va = a(n, c, y + i, x + j), vb = b(n, c, y + i, x + j);
              ua += w * va;
              ub += w * vb;
              saa += w * va * va;
              sbb += w * vb * vb;
              sab += w * va * vb;
            }
          const double var_a = saa - ua * ua, var_b = sbb - ub * ub, cov = sab - ua * ub;
          sum += ((2 * ua * ub + c1) * (2 * cov + c2)) / ((ua * ua + ub * ub + c1) * (var_a + var_b + c2));
          ++count;
        }
      total += sum / static_cast<double>(count);
    }
  return total / static_cast<double>(s.n * s.c);
}

Tensor<double> fixture_tensor(const std::string& name) {
  return to_tensor<double>(read_ppm_file(testing::fixture(name)));
}

// ---------------------------------------------------------------------------
// PSNR

TEST(Psnr, IdenticalImagesGiveSentinel) {
  const auto a = random_tensor<double>(Shape{1, 3, 8, 8}, 1, 0, 1);
  EXPECT_TRUE(is_identical(psnr(a, a)));
}

TEST(Psnr, OffsetOneAtPeak255) {
  Tensor<double> a(Shape{1, 3, 10, 10});
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<double>(i % 200);
  Tensor<double> b = a;
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] += 1.0;
  EXPECT_NEAR(psnr(a, b, 255.0), 48.1308, 1e-4);
  EXPECT_NEAR(psnr(a, b, 255.0), 20 * std::log10(255.0), 1e-12);
}

TEST(Psnr, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = random_tensor<double>(Shape{2, 3, 9, 7}, 2 * seed, 0, 1);
    const auto b = random_tensor<double>(Shape{2, 3, 9, 7}, 2 * seed + 1, 0, 1);
    const double ref = psnr_oracle(a, b, 1.0);
    EXPECT_LE(std::abs(psnr(a, b) - ref) / std::abs(ref), 1e-10);
  }
}

TEST(Psnr, SymmetricAndPeakCovariant) {
  const auto a = random_tensor<double>(Shape{1, 3, 8, 8}, 3, 0, 1);
  const auto b = random_tensor<double>(Shape{1, 3, 8, 8}, 4, 0, 1);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_NEAR(psnr(a, b, 2.0) - psnr(a, b, 1.0), 20 * std::log10(2.0), 1e-12);
}

TEST(Psnr, ShapeMismatchIsAnError) {
  EXPECT_THROW((void)psnr(Tensor<double>(Shape{1, 3, 4, 4}), Tensor<double>(Shape{1, 3, 4, 5})), ShapeError);
}

// ---------------------------------------------------------------------------
// SSIM

TEST(Ssim, SelfSimilarityIsExactlyOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor<double>(Shape{1, 3, 16, 20}, seed, 0, 1);
    EXPECT_EQ(ssim(a, a), 1.0);
    const auto f = a.cast<float>();
    EXPECT_EQ(ssim(f, f), 1.0);
  }
  const Tensor<double> flat(Shape{1, 3, 11, 11}, 0.3);
  EXPECT_EQ(ssim(flat, flat), 1.0);
}

TEST(Ssim, Symmetric) {
  const auto a = random_tensor<double>(Shape{1, 3, 16, 16}, 5, 0, 1);
  const auto b = random_tensor<double>(Shape{1, 3, 16, 16}, 6, 0, 1);
  EXPECT_LE(std::abs(ssim(a, b) - ssim(b, a)), 1e-12);
}

TEST(Ssim, InvertedBinaryImageIsNegative) {
  Tensor<double> a(Shape{1, 3, 16, 16});
  std::mt19937_64 rng(7);
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<double>(rng() & 1);
  Tensor<double> b = a;
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] = 1.0 - a[i];
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor<double>(Shape{1, 3, 16, 19}, 10 + seed, 0, 1);
    auto b = a;
    const auto noise = random_tensor<double>(a.shape(), 20 + seed, -0.2, 0.2);
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = std::clamp(b[i] + noise[i], 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-12) << seed;
  }
}

TEST(Ssim, SmallerThanWindowIsAnError) {
  EXPECT_THROW((void)ssim(Tensor<double>(Shape{1, 3, 10, 16}), Tensor<double>(Shape{1, 3, 10, 16})), ShapeError);
}

// ---------------------------------------------------------------------------
// Fixture pairs, against values computed by an independent library

TEST(Fixtures, MatchStoredOracles) {
  std::ifstream in(testing::fixture("metrics_oracle.json"));
  ASSERT_TRUE(in) << "missing metrics_oracle.json";
  const auto oracle = nlohmann::json::parse(in);
  for (const char* pair : {"pair16", "pair40x48"}) {
    const auto ref = fixture_tensor(std::string(pair) + "_ref.ppm");
    const auto test = fixture_tensor(std::string(pair) + "_test.ppm");
    EXPECT_NEAR(psnr(ref, test), oracle[pair]["psnr"].get<double>(), 1e-8) << pair;
    EXPECT_NEAR(ssim(ref, test), oracle[pair]["ssim"].get<double>(), 1e-8) << pair;
    EXPECT_NEAR(ssim(ref, test), ssim_oracle(ref, test), 1e-12) << pair;
  }
}

} // namespace
} // namespace d2net::metrics
