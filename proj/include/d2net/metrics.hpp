// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>

#include "d2net/tensor.hpp"

namespace d2net::metrics {

/// Returned by psnr() for images with zero mean squared error.
inline constexpr double kIdentical = std::numeric_limits<double>::infinity();

inline bool is_identical(double psnr_db) { return psnr_db == kIdentical; }

/// 10 log10(peak^2 / MSE) with MSE over every element of the pair.
template <Scalar T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, evaluated on window positions fully inside
/// the image, averaged per channel and then over channels and batch.
template <Scalar T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

} // namespace d2net::metrics
