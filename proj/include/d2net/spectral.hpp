// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "d2net/tensor.hpp"

namespace d2net::spectral {

/// h x w grid of complex values, stored as separate real and imaginary planes.
template <Scalar T>
struct ComplexGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> re;
  std::vector<T> im;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h_, std::size_t w_) : h(h_), w(w_), re(h_ * w_, T(0)), im(h_ * w_, T(0)) {}
};

// All transforms use the unitary normalization
//   X[u,v] = 1/sqrt(hw) * sum_{m,n} x[m,n] exp(-j 2 pi (m u / h + n v / w)),
// so the inverse is the adjoint and Parseval holds without extra factors.

/// Reference transform: direct O((hw)^2) double sum.
template <Scalar T>
ComplexGrid<T> dft2_direct(std::span<const T> x, std::size_t h, std::size_t w);

/// Reference inverse: direct O((hw)^2) double sum, complex result.
template <Scalar T>
ComplexGrid<T> idft2_direct(const ComplexGrid<T>& X);

/// Row-column transform with precomputed twiddles; agrees with dft2_direct.
template <Scalar T>
ComplexGrid<T> dft2(std::span<const T> x, std::size_t h, std::size_t w);

/// Complex inverse transform (row-column).
template <Scalar T>
ComplexGrid<T> idft2(const ComplexGrid<T>& X);

/// Real part of the inverse transform. Throws SpectralError when the largest
/// imaginary magnitude exceeds `relative_limit * max|real part|`, which means
/// X was not the spectrum of a real signal.
template <Scalar T>
std::vector<T> idft2_real(const ComplexGrid<T>& X, double relative_limit = 1e-9);

/// Amplitude sqrt(R^2 + I^2) and four-quadrant phase atan2(I, R) in (-pi, pi].
/// A zero bin has phase 0.
template <Scalar T>
struct AmpPhase {
  std::vector<T> amplitude;
  std::vector<T> phase;
};

template <Scalar T>
AmpPhase<T> amp_phase(const ComplexGrid<T>& X);

/// Independent 2-D transforms over non-overlapping patch x patch tiles of
/// every (batch, channel) plane. Grids are ordered by (n, c, tile_row, tile_col).
template <Scalar T>
struct PatchSpectra {
  Shape shape;
  std::size_t patch = 0;
  std::vector<ComplexGrid<T>> grids;

  std::size_t tiles_y() const { return shape.h / patch; }
  std::size_t tiles_x() const { return shape.w / patch; }
};

template <Scalar T>
PatchSpectra<T> patchwise_dft(const Tensor<T>& x, std::size_t patch);

template <Scalar T>
Tensor<T> patchwise_idft(const PatchSpectra<T>& spectra, double relative_limit = 1e-9);

/// Throws ShapeError unless H and W are multiples of `patch`.
void require_patch_multiple(const Shape& s, std::size_t patch, const char* who);

/// Cached twiddles for repeated unitary transforms of one (h, w) size.
/// Internally evaluates in double regardless of the caller's precision.
class Dft2Plan {
public:
  Dft2Plan(std::size_t h, std::size_t w);

  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }

  /// Forward transform of a real h x w tile read with row stride `stride`.
  template <Scalar T>
  void forward_real(const T* x, std::size_t stride, double* re, double* im) const;

  /// In-place inverse transform of a complex h x w grid.
  void inverse(double* re, double* im) const;

  /// Elements of scratch space spectral_product needs per tile.
  std::size_t scratch_size() const { return 4 * h_ * w_; }

private:
  void transform_rows(double* re, double* im, bool inverse) const;
  void transform_cols(double* re, double* im, bool inverse) const;

  std::size_t h_;
  std::size_t w_;
  std::vector<double> cos_h_, sin_h_, cos_w_, sin_w_;
};

/// Per-tile circular interaction of two real tiles through the spectrum:
///   out = Re F^-1( F(a) .* F(b) )          when conjugate_b == false
///   out = Re F^-1( F(a) .* conj(F(b)) )    when conjugate_b == true
/// With unitary scaling, the first equals the circular convolution of a and b
/// divided by sqrt(hw); the second the circular cross-correlation likewise.
/// Returns the largest imaginary magnitude discarded.
template <Scalar T>
double spectral_product(const Dft2Plan& plan, const T* a, const T* b, std::size_t stride, T* out,
                        bool conjugate_b, std::span<double> scratch);

} // namespace d2net::spectral
