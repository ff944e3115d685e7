// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/params.hpp"

#include <cmath>
#include <random>

namespace d2net {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

template <Scalar T>
ParamRef ModuleParams<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return ParamRef{tensors_.size() - 1};
}

template <Scalar T>
ParamRef ModuleParams<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return ParamRef{it->second};
}

template <Scalar T>
ModuleParams<T> ModuleParams<T>::zeros_like() const {
  ModuleParams out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape()));
  return out;
}

template <Scalar T>
std::size_t ModuleParams<T>::numel() const {
  std::size_t total = 0;
  for (const auto& t : tensors_) total += t.numel();
  return total;
}

ParamRef ParamLayout::declare(std::string name, Shape shape, InitKind init, std::size_t fan_in) {
  if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), shape, init, fan_in});
  return ParamRef{entries_.size() - 1};
}

std::size_t ParamLayout::numel() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.shape.numel();
  return total;
}

template <Scalar T>
ModuleParams<T> ParamLayout::instantiate(std::uint64_t seed) const {
  ModuleParams<T> out;
  for (const auto& e : entries_) {
    Tensor<T> t(e.shape);
    switch (e.init) {
    case InitKind::zeros:
      break;
    case InitKind::ones:
      t.fill(T(1));
      break;
    case InitKind::fan_in_uniform: {
      std::mt19937_64 rng(seed ^ fnv1a(e.name));
      const double bound = std::sqrt(1.0 / static_cast<double>(e.fan_in));
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        t[i] = static_cast<T>(bound * (2.0 * u - 1.0));
      }
      break;
    }
    }
    out.add(e.name, std::move(t));
  }
  return out;
}

template class ModuleParams<float>;
template class ModuleParams<double>;
template ModuleParams<float> ParamLayout::instantiate<float>(std::uint64_t) const;
template ModuleParams<double> ParamLayout::instantiate<double>(std::uint64_t) const;

} // namespace d2net
