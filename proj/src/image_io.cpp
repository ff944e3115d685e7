// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace d2net {

namespace {

// Skips whitespace and '#' comments, then reads a decimal header field.
std::size_t header_field(std::istream& in, const char* what) {
  for (;;) {
    const int c = in.peek();
    if (c == EOF) throw ImageError(std::string("ppm: truncated header before ") + what);
    if (c == '#') {
      in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  bool any = false;
  while (std::isdigit(in.peek())) {
    v = v * 10 + static_cast<std::size_t>(in.get() - '0');
    any = true;
    if (v > (1u << 24)) throw ImageError(std::string("ppm: ") + what + " too large");
  }
  if (!any) throw ImageError(std::string("ppm: malformed ") + what);
  return v;
}

} // namespace

Image8 read_ppm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw ImageError("ppm: not a binary P6 file");
  Image8 img;
  img.width = header_field(in, "width");
  img.height = header_field(in, "height");
  const std::size_t maxval = header_field(in, "maxval");
  if (maxval != 255) throw ImageError("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
  if (img.width == 0 || img.height == 0) throw ImageError("ppm: empty image");
  if (!std::isspace(in.get())) throw ImageError("ppm: missing separator after maxval");
  img.rgb.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size()) throw ImageError("ppm: truncated pixel data");
  return img;
}

Image8 read_ppm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open image '" + path + "'");
  try {
    return read_ppm(f);
  } catch (const ImageError& e) {
    throw ImageError(path + ": " + e.what());
  }
}

void write_ppm(const Image8& image, std::ostream& out) {
  if (image.rgb.size() != image.width * image.height * 3) throw ShapeError("ppm: pixel buffer size mismatch");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

void write_ppm_file(const Image8& image, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot write image '" + path + "'");
  write_ppm(image, f);
  f.flush();
  if (!f) throw ImageError("write failed for '" + path + "'");
}

template <Scalar T>
Tensor<T> to_tensor(const Image8& image) {
  Tensor<T> out(Shape{1, 3, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out(0, c, y, x) = static_cast<T>(image.rgb[(y * image.width + x) * 3 + c]) / T(255);
  return out;
}

template <Scalar T>
Image8 from_tensor(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("from_tensor: expected (1, 3, H, W), got " + s.str());
  Image8 img{s.w, s.h, std::vector<std::uint8_t>(s.h * s.w * 3)};
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t xx = 0; xx < s.w; ++xx)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(x(0, c, y, xx)), 0.0, 1.0);
        img.rgb[(y * s.w + xx) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

template Tensor<float> to_tensor(const Image8&);
template Tensor<double> to_tensor(const Image8&);
template Image8 from_tensor(const Tensor<float>&);
template Image8 from_tensor(const Tensor<double>&);

} // namespace d2net
