// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "d2net/tensor.hpp"

namespace d2net {

/// Raised for unreadable or malformed image files.
class ImageError : public InputError {
public:
  using InputError::InputError;
};

/// 8-bit interleaved RGB raster.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb; ///< height * width * 3, row-major

  bool operator==(const Image8&) const = default;
};

/// Binary PPM (P6) with maxval 255. Comments and arbitrary whitespace are
/// accepted in the header; the writer emits "P6\n<w> <h>\n255\n".
Image8 read_ppm(std::istream& in);
Image8 read_ppm_file(const std::string& path);
void write_ppm(const Image8& image, std::ostream& out);
void write_ppm_file(const Image8& image, const std::string& path);

/// (1, 3, H, W) tensor with values v / 255.
template <Scalar T>
Tensor<T> to_tensor(const Image8& image);

/// Rounds clamp(x, 0, 1) * 255 to the nearest integer. Expects N == 1, C == 3.
template <Scalar T>
Image8 from_tensor(const Tensor<T>& x);

} // namespace d2net
