// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "d2net/tensor.hpp"

namespace d2net {

/// Index of a parameter inside a ModuleParams / ParamLayout.
struct ParamRef {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

/// Named, ordered collection of learnable tensors. Order is insertion order
/// and is identical for every instance built from the same layout.
template <Scalar T>
class ModuleParams {
public:
  ModuleParams() = default;

  ParamRef add(std::string name, Tensor<T> value);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& operator[](ParamRef r) { return tensors_[r.index]; }
  const Tensor<T>& operator[](ParamRef r) const { return tensors_[r.index]; }
  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }

  /// Throws Error if `name` is absent.
  ParamRef find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Same names and shapes, all values zero (gradient accumulator).
  ModuleParams zeros_like() const;

  template <Scalar U>
  ModuleParams<U> cast() const {
    ModuleParams<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  /// Total number of scalar elements.
  std::size_t numel() const;

private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class InitKind { fan_in_uniform, zeros, ones };

/// Shape-only declaration of a parameter set, filled in by the blocks that
/// own each parameter. `instantiate` materializes values deterministically.
class ParamLayout {
public:
  struct Entry {
    std::string name;
    Shape shape;
    InitKind init = InitKind::zeros;
    std::size_t fan_in = 1;
  };

  ParamRef declare(std::string name, Shape shape, InitKind init, std::size_t fan_in = 1);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  /// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)) from a per-tensor stream
  /// derived from (seed, name); biases zero; norm gains one.
  template <Scalar T>
  ModuleParams<T> instantiate(std::uint64_t seed) const;

private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// FNV-1a hash of a string, used to derive per-tensor random streams.
std::uint64_t fnv1a(const std::string& s);

} // namespace d2net
