// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace d2net {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents are incompatible with the requested operation.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A configuration violates its invariants; raised at construction time.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// A spectrum failed a physical-consistency check (e.g. large imaginary
/// residue after an inverse transform of real-signal products).
class SpectralError : public Error {
public:
  using Error::Error;
};

/// Non-finite values or divergence detected.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Invalid user data (pixel range, image size, corpus size).
class InputError : public Error {
public:
  using Error::Error;
};

} // namespace d2net
