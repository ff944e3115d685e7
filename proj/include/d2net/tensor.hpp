// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "d2net/error.hpp"
#include "d2net/memory_ledger.hpp"

namespace d2net {

/// Extents of a dense (N, C, H, W) tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Checked product of extents; throws ShapeError on overflow.
std::size_t checked_numel(const Shape& s);

template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

/// Dense 4-axis tensor in (N, C, H, W) row-major layout, W fastest.
///
/// Storage is owned by value. Each allocation charges the active
/// MemoryLedger (if any) for as long as the tensor lives.
template <Scalar T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(checked_numel(shape), fill), charge_(data_.size()) {}
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Pointer to the (n, c) plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v);

  /// Same values, reinterpreted under a different shape with equal numel.
  Tensor reshaped(Shape shape) const;

  template <Scalar U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

private:
  Shape shape_{};
  std::vector<T> data_;
  LedgerCharge charge_;
};

enum class Elementwise { add, sub, mul };

/// out[i] = op(a[i], b[i]); shapes must match exactly.
template <Scalar T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::add, a, b); }
template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::sub, a, b); }
template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::mul, a, b); }

template <Scalar T>
Tensor<T> scale(const Tensor<T>& a, T s);

/// a += b in place; shapes must match.
template <Scalar T>
void accumulate(Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const std::size_t> sizes);

template <Scalar T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

/// Mirror padding at the bottom and right edges, without repeating the edge
/// sample. Each pad must be smaller than the corresponding extent.
template <Scalar T>
Tensor<T> pad_reflect(const Tensor<T>& x, std::size_t bottom, std::size_t right);

/// Keep the top-left h x w window.
template <Scalar T>
Tensor<T> crop(const Tensor<T>& x, std::size_t h, std::size_t w);

/// Throws NumericError naming `op` if any element is NaN or infinite.
template <Scalar T>
void check_finite(const Tensor<T>& x, const char* op);

template <Scalar T>
T max_abs(const Tensor<T>& x);

/// Largest |a - b| / max(|a|, |b|, floor) over all elements.
template <Scalar T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-300);

#ifndef NDEBUG
#define D2NET_GUARD_FINITE(t, op) ::d2net::check_finite((t), (op))
#else
#define D2NET_GUARD_FINITE(t, op) ((void)0)
#endif

/// Mirror an index into [0, n) without edge repetition; folds repeatedly
/// when the offset exceeds the extent. n == 1 maps everything to 0.
inline std::ptrdiff_t mirror_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

} // namespace d2net
