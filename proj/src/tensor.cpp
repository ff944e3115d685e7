// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace d2net {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

std::size_t checked_numel(const Shape& s) {
  std::size_t total = 1;
  for (std::size_t e : {s.n, s.c, s.h, s.w}) {
    if (e != 0 && total > std::numeric_limits<std::size_t>::max() / e)
      throw ShapeError("shape " + s.str() + " overflows the addressable range");
    total *= e;
  }
  return total;
}

template <Scalar T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(shape), data_(std::move(values)), charge_(data_.size()) {
  if (data_.size() != checked_numel(shape))
    throw ShapeError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(data_.size()));
}

template <Scalar T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <Scalar T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (checked_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(shape, data_);
}

namespace {

template <Scalar T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

} // namespace

template <Scalar T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise");
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* po = out.raw();
  switch (op) {
  case Elementwise::add:
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    break;
  case Elementwise::sub:
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    break;
  case Elementwise::mul:
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    break;
  }
  D2NET_GUARD_FINITE(out, "elementwise");
  return out;
}

template <Scalar T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  D2NET_GUARD_FINITE(out, "scale");
  return out;
}

template <Scalar T>
void accumulate(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "accumulate");
  T* pa = a.raw();
  const T* pb = b.raw();
  for (std::size_t i = 0; i < a.numel(); ++i) pa[i] += pb[i];
}

template <Scalar T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const std::size_t> sizes) {
  std::size_t total = 0;
  std::string listing;
  for (std::size_t s : sizes) {
    if (s == 0) throw ShapeError("split_channels: split sizes must be positive");
    total += s;
    listing += (listing.empty() ? "" : ",") + std::to_string(s);
  }
  const Shape& xs = x.shape();
  if (total != xs.c)
    throw ShapeError("split_channels: sizes [" + listing + "] sum to " + std::to_string(total) +
                     ", but C = " + std::to_string(xs.c));
  std::vector<Tensor<T>> parts;
  parts.reserve(sizes.size());
  std::size_t c0 = 0;
  const std::size_t plane = xs.plane();
  for (std::size_t s : sizes) {
    Tensor<T> part(Shape{xs.n, s, xs.h, xs.w});
    for (std::size_t n = 0; n < xs.n; ++n)
      std::memcpy(part.plane(n, 0), x.plane(n, c0), s * plane * sizeof(T));
    parts.push_back(std::move(part));
    c0 += s;
  }
  return parts;
}

template <Scalar T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const Shape& first = parts[0].shape();
  std::size_t channels = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw ShapeError("concat_channels: part " + std::to_string(i) + " has shape " + s.str() +
                       ", incompatible with part 0 shape " + first.str());
    channels += s.c;
  }
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      if (p.shape().c != 0) std::memcpy(out.plane(n, c0), p.plane(n, 0), p.shape().c * plane * sizeof(T));
      c0 += p.shape().c;
    }
  }
  return out;
}

template <Scalar T>
Tensor<T> pad_reflect(const Tensor<T>& x, std::size_t bottom, std::size_t right) {
  const Shape& s = x.shape();
  if ((bottom > 0 && bottom >= s.h) || (right > 0 && right >= s.w))
    throw ShapeError("pad_reflect: pad (" + std::to_string(bottom) + "," + std::to_string(right) +
                     ") must be smaller than extent (" + std::to_string(s.h) + "," + std::to_string(s.w) + ")");
  if (bottom == 0 && right == 0) return x;
  const std::size_t oh = s.h + bottom;
  const std::size_t ow = s.w + right;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t sy = y < s.h ? y : 2 * (s.h - 1) - y;
        const T* row = src + sy * s.w;
        T* orow = dst + y * ow;
        std::memcpy(orow, row, s.w * sizeof(T));
        for (std::size_t xx = s.w; xx < ow; ++xx) orow[xx] = row[2 * (s.w - 1) - xx];
      }
    }
  return out;
}

template <Scalar T>
Tensor<T> crop(const Tensor<T>& x, std::size_t h, std::size_t w) {
  const Shape& s = x.shape();
  if (h > s.h || w > s.w)
    throw ShapeError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " exceeds " + s.str());
  if (h == s.h && w == s.w) return x;
  Tensor<T> out(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::memcpy(out.plane(n, c) + y * w, x.plane(n, c) + y * s.w, w * sizeof(T));
  return out;
}

template <Scalar T>
void check_finite(const Tensor<T>& x, const char* op) {
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(x[i]))
      throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
}

template <Scalar T>
T max_abs(const Tensor<T>& x) {
  T m = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) m = std::max(m, std::abs(x[i]));
  return m;
}

template <Scalar T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  require_same_shape(a, b, "max_rel_diff");
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i];
    const double y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

#define D2NET_INSTANTIATE(T)                                                                       \
  template class Tensor<T>;                                                                        \
  template Tensor<T> elementwise(Elementwise, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template void accumulate(Tensor<T>&, const Tensor<T>&);                                          \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                  \
  template Tensor<T> pad_reflect(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t);                             \
  template void check_finite(const Tensor<T>&, const char*);                                       \
  template T max_abs(const Tensor<T>&);                                                            \
  template double max_rel_diff(const Tensor<T>&, const Tensor<T>&, double);

D2NET_INSTANTIATE(float)
D2NET_INSTANTIATE(double)

} // namespace d2net
