// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "d2net/nn_ops.hpp"
#include "support.hpp"

namespace d2net::nn {
namespace {

using testing::bitwise_equal;
using testing::random_tensor;
using testing::rel_err;

const Tensor<double>* const kNoBias = nullptr;
const Tensor<float>* const kNoBiasF = nullptr;

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

TEST(Conv2d, PointwiseIdentity) {
  const auto spec = ConvSpec::pointwise(3, 3);
  Tensor<double> w(spec.weight_shape());
  for (std::size_t c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0;
  const Tensor<double> b(spec.bias_shape());
  const auto x = random_tensor<double>(Shape{2, 3, 5, 4}, 1);
  EXPECT_TRUE(bitwise_equal(conv2d(x, spec, w, &b), x));
}

TEST(Conv2d, DepthwiseDeltaKernelIsIdentity) {
  const auto spec = ConvSpec::dw(4, 3, 3);
  Tensor<double> w(spec.weight_shape());
  for (std::size_t c = 0; c < 4; ++c) w(c, 0, 1, 1) = 1.0;
  const auto x = random_tensor<double>(Shape{1, 4, 6, 5}, 2);
  EXPECT_TRUE(bitwise_equal(conv2d(x, spec, w, kNoBias), x));
}

TEST(Conv2d, Dense3x3MatchesDirectSum) {
  const auto spec = ConvSpec::full(3, 3, 3);
  const auto x = random_tensor<double>(Shape{1, 3, 6, 6}, 3);
  const auto w = random_tensor<double>(spec.weight_shape(), 4);
  const auto b = random_tensor<double>(spec.bias_shape(), 5);
  EXPECT_LE(rel_err(conv2d(x, spec, w, &b), testing::conv_oracle(x, spec, w, &b)), 1e-12);
}

// Randomized shapes: C in [1, 8], k in {1, 3, 5, 11}, H, W in [3, 16], both
// boundaries, dense, depthwise and band kernels.
TEST(Conv2d, RandomizedShapesMatchDirectSum) {
  std::mt19937_64 rng(6);
  const std::size_t ks[] = {1, 3, 5, 11};
  for (int trial = 0; trial < 60; ++trial) {
    ConvSpec spec;
    spec.in_channels = 1 + rng() % 8;
    spec.depthwise = trial % 3 == 0;
    spec.out_channels = spec.depthwise ? spec.in_channels : 1 + rng() % 8;
    const std::size_t k = ks[rng() % 4];
    switch (trial % 4) {
    case 0:
      spec.kernel_h = spec.kernel_w = k;
      break;
    case 1:
      spec.kernel_h = 1;
      spec.kernel_w = k;
      break;
    case 2:
      spec.kernel_h = k;
      spec.kernel_w = 1;
      break;
    default:
      spec.kernel_h = k;
      spec.kernel_w = ks[rng() % 4];
    }
    spec.bias = trial % 2 == 0;
    spec.boundary = trial % 5 == 0 ? Boundary::zero : Boundary::reflect;
    const Shape xs{1 + rng() % 2, spec.in_channels, 3 + rng() % 14, 3 + rng() % 14};
    const auto x = random_tensor<double>(xs, 100 + trial);
    const auto w = random_tensor<double>(spec.weight_shape(), 200 + trial);
    const auto b = random_tensor<double>(spec.bias_shape(), 300 + trial);
    const Tensor<double>* bp = spec.bias ? &b : nullptr;
    EXPECT_LE(rel_err(conv2d(x, spec, w, bp), testing::conv_oracle(x, spec, w, bp)), 1e-12)
        << "trial " << trial << " k " << spec.kernel_h << "x" << spec.kernel_w << " x " << xs.str();
  }
}

TEST(Conv2d, BackwardIsTheAdjoint) {
  for (bool depthwise : {false, true}) {
    const ConvSpec spec = depthwise ? ConvSpec::dw(3, 5, 5) : ConvSpec::full(3, 4, 3);
    const auto w = random_tensor<double>(spec.weight_shape(), 7);
    const Shape xs{2, 3, 7, 6};
    const Shape ys{2, spec.out_channels, 7, 6};
    for (std::uint64_t d = 0; d < 20; ++d) {
      const auto v = random_tensor<double>(xs, 1000 + d);
      const auto g = random_tensor<double>(ys, 2000 + d);
      const auto grads = conv2d_backward(v, spec, w, g);
      const double lhs = dot(conv2d(v, spec, w, kNoBias), g);
      EXPECT_NEAR(dot(grads.input, v), lhs, 1e-12 * std::abs(lhs) + 1e-12);
      // The weight gradient is the adjoint in w for fixed input.
      const auto dw = random_tensor<double>(spec.weight_shape(), 3000 + d);
      EXPECT_NEAR(dot(grads.weight, dw), dot(conv2d(v, spec, dw, kNoBias), g), 1e-10);
    }
  }
}

TEST(Conv2d, MismatchErrorsNameTheLayer) {
  const auto spec = ConvSpec::full(3, 4, 3);
  const Tensor<double> w(spec.weight_shape());
  const Tensor<double> x(Shape{1, 2, 4, 4});
  try {
    (void)conv2d(x, spec, w, kNoBias, "enc1.head");
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("enc1.head"), std::string::npos);
  }
  const Tensor<double> bad_w(Shape{4, 3, 5, 5});
  EXPECT_THROW((void)conv2d(Tensor<double>(Shape{1, 3, 4, 4}), spec, bad_w, kNoBias), ShapeError);
}

TEST(ConvSpec, ValidationAndCounts) {
  EXPECT_EQ(ConvSpec::full(3, 24, 3).param_count(), 672u);
  EXPECT_THROW(ConvSpec::full(3, 4, 4).validate("even"), ConfigError);
  ConvSpec dw = ConvSpec::dw(4, 3, 3);
  dw.out_channels = 5;
  EXPECT_THROW(dw.validate("dw"), ConfigError);
}

TEST(Conv2d, RepeatedCallsAreBitwiseEqual) {
  const auto spec = ConvSpec::full(8, 8, 3);
  const auto x = random_tensor<float>(Shape{2, 8, 16, 16}, 8);
  const auto w = random_tensor<float>(spec.weight_shape(), 9);
  EXPECT_TRUE(bitwise_equal(conv2d(x, spec, w, kNoBiasF), conv2d(x, spec, w, kNoBiasF)));
}

TEST(Gelu, ValuesAgainstErfOracle) {
  const Tensor<double> x(Shape{1, 1, 1, 5}, {0.0, 1.0, -10.0, 40.0, -0.5});
  const auto y = gelu(x);
  EXPECT_EQ(y[0], 0.0);
  const long double phi1 = 0.5L * (1.0L + std::erf(1.0L / std::sqrt(2.0L)));
  EXPECT_NEAR(y[1], static_cast<double>(phi1), 1e-15);
  EXPECT_LE(std::abs(y[2]), 1e-20);
  EXPECT_EQ(y[3], 40.0);
  const long double phim = 0.5L * (1.0L + std::erf(-0.5L / std::sqrt(2.0L)));
  EXPECT_NEAR(y[4], static_cast<double>(-0.5L * phim), 1e-15);
}

TEST(SoftmaxPair, SymmetryAndSaturation) {
  const auto a = random_tensor<double>(Shape{1, 2, 3, 3}, 10);
  const auto [wa, wb] = softmax_pair(a, a);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(wa[i], 0.5);
    EXPECT_EQ(wb[i], 0.5);
  }
  Tensor<double> b = a;
  Tensor<double> shifted = a;
  for (std::size_t i = 0; i < a.numel(); ++i) shifted[i] += 100.0;
  const auto [sa, sb] = softmax_pair(shifted, b);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(sa[i], 1.0, 1e-15);
    EXPECT_NEAR(sb[i], 3.720075976020836e-44, 1e-56);
  }
}

TEST(SoftmaxPair, PartitionOfUnityIncludingExtremes) {
  auto a = random_tensor<double>(Shape{1, 1, 10, 10}, 11, -50, 50);
  auto b = random_tensor<double>(Shape{1, 1, 10, 10}, 12, -50, 50);
  a[0] = 1e30;
  b[1] = 1e30;
  a[2] = -1e30;
  b[2] = 1e30;
  a[3] = std::numeric_limits<double>::max();
  const auto [wa, wb] = softmax_pair(a, b);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_GE(wa[i], 0.0);
    EXPECT_LE(wa[i], 1.0);
    EXPECT_NEAR(wa[i] + wb[i], 1.0, 1e-15);
  }
}

TEST(LayerNorm, ConstantAcrossChannelsGivesOffset) {
  const Tensor<double> x(Shape{1, 4, 2, 2}, 3.0);
  const Tensor<double> gain(Shape{1, 4, 1, 1}, {1, 2, 3, 4});
  const Tensor<double> offset(Shape{1, 4, 1, 1}, {0.5, -1, 2, 0});
  const auto y = layer_norm(x, gain, offset);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.plane(0, c)[i], offset[c]);
}

// Per-position (mean, variance) across channels.
std::pair<double, double> channel_moments(const Tensor<double>& t, std::size_t n, std::size_t i) {
  const std::size_t c = t.shape().c;
  double m = 0, v = 0;
  for (std::size_t k = 0; k < c; ++k) m += t.plane(n, k)[i];
  m /= static_cast<double>(c);
  for (std::size_t k = 0; k < c; ++k) v += (t.plane(n, k)[i] - m) * (t.plane(n, k)[i] - m);
  return {m, v / static_cast<double>(c)};
}

TEST(LayerNorm, VarianceIsShrunkExactlyByEpsilon) {
  const auto x = random_tensor<double>(Shape{2, 6, 4, 5}, 13, -3, 3);
  const Tensor<double> gain(Shape{1, 6, 1, 1}, 1.0);
  const Tensor<double> offset(Shape{1, 6, 1, 1});
  const auto y = layer_norm(x, gain, offset);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 20; ++i) {
      const auto [mx, vx] = channel_moments(x, n, i);
      const auto [my, vy] = channel_moments(y, n, i);
      EXPECT_LE(std::abs(my), 1e-10);
      EXPECT_NEAR(vy, vx / (vx + kLayerNormEps), 1e-12);
    }
}

// Unit variance and scale invariance hold to the stated tolerances once the
// channel variance dwarfs epsilon.
TEST(LayerNorm, MomentsAndScaleInvarianceAtLargeScale) {
  const auto x = random_tensor<double>(Shape{2, 6, 4, 5}, 14, -300, 300);
  const Tensor<double> gain(Shape{1, 6, 1, 1}, 1.0);
  const Tensor<double> offset(Shape{1, 6, 1, 1});
  const auto y = layer_norm(x, gain, offset);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 20; ++i) {
      const auto [m, v] = channel_moments(y, n, i);
      EXPECT_LE(std::abs(m), 1e-10);
      EXPECT_NEAR(v, 1.0, 1e-6);
    }
  EXPECT_LE(rel_err(layer_norm(scale(x, 7.0), gain, offset), y), 1e-10);
}

TEST(LayerNorm, ChannelMismatchIsAnError) {
  const Tensor<double> x(Shape{1, 4, 2, 2});
  const Tensor<double> gain(Shape{1, 3, 1, 1}, 1.0);
  EXPECT_THROW((void)layer_norm(x, gain, gain), ShapeError);
}

TEST(Resample, PermutationRoundTripIsBitwise) {
  const auto x = random_tensor<double>(Shape{2, 3, 6, 8}, 14);
  EXPECT_TRUE(bitwise_equal(depth_to_space(space_to_depth(x)), x));
  const auto z = random_tensor<double>(Shape{1, 8, 3, 5}, 15);
  EXPECT_TRUE(bitwise_equal(space_to_depth(depth_to_space(z)), z));
}

TEST(Resample, ChannelLayout) {
  const auto x = random_tensor<double>(Shape{1, 2, 4, 4}, 16);
  const auto s = space_to_depth(x);
  EXPECT_EQ(s(0, 1 * 4 + 1 * 2 + 0, 1, 1), x(0, 1, 3, 2));
}

TEST(Resample, LearnableShapes) {
  ParamLayout layout;
  const auto down = Downsample::declare(layout, "down", 24);
  const auto up = Upsample::declare(layout, "up", 48);
  const auto p = layout.instantiate<float>(1);
  const Tensor<float> x(Shape{1, 24, 64, 64});
  const auto d = downsample(p, down, x);
  EXPECT_EQ(d.shape(), (Shape{1, 48, 32, 32}));
  EXPECT_EQ(upsample(p, up, d).shape(), (Shape{1, 24, 64, 64}));
  EXPECT_EQ(d.numel() * 2, x.numel());
}

TEST(Resample, OddExtentsAreRejected) {
  EXPECT_THROW((void)space_to_depth(Tensor<double>(Shape{1, 1, 5, 4})), ShapeError);
  EXPECT_THROW((void)depth_to_space(Tensor<double>(Shape{1, 3, 2, 2})), ShapeError);
}

TEST(Params, FanInInitIsSeededAndBounded) {
  ParamLayout layout;
  const auto conv = ConvLayer::declare(layout, "c", ConvSpec::full(4, 6, 3));
  const auto a = layout.instantiate<double>(5);
  const auto b = layout.instantiate<double>(5);
  const auto c = layout.instantiate<double>(6);
  EXPECT_TRUE(bitwise_equal(a[conv.weight], b[conv.weight]));
  EXPECT_FALSE(bitwise_equal(a[conv.weight], c[conv.weight]));
  const double bound = std::sqrt(1.0 / 36.0);
  for (double v : a[conv.weight].data()) EXPECT_LE(std::abs(v), bound);
  for (double v : a[conv.bias].data()) EXPECT_EQ(v, 0.0);
}

} // namespace
} // namespace d2net::nn
