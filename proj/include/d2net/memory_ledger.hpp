// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace d2net {

namespace detail {
struct LedgerState;
}

/// Exact count of transient array elements allocated while the ledger is
/// active on the current thread. Counts elements, not bytes, so a single and
/// a double precision run produce identical numbers.
///
/// Every `Tensor` allocation charges the active ledger for its lifetime.
/// Scratch buffers that are not tensors charge through `LedgerCharge`.
class MemoryLedger {
public:
  struct Record {
    std::string label;
    std::size_t allocated = 0; ///< elements allocated inside the section
    std::size_t peak = 0;      ///< peak concurrent elements while the section was open
  };

  MemoryLedger();

  std::size_t current() const;
  std::size_t peak() const;
  std::size_t total_allocated() const;

  /// Open / close a labelled section. Sections nest.
  void push(std::string label);
  void pop();

  const std::vector<Record>& records() const;

  /// Reset the peak to the current level (used between probe runs).
  void reset_peak();

  const std::shared_ptr<detail::LedgerState>& state() const { return state_; }

private:
  std::shared_ptr<detail::LedgerState> state_;
};

/// Makes `ledger` the active ledger of this thread for the scope's lifetime.
class LedgerScope {
public:
  explicit LedgerScope(MemoryLedger& ledger);
  ~LedgerScope();
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;

private:
  std::shared_ptr<detail::LedgerState> previous_;
};

/// Labelled section on the active ledger, if any.
class LedgerSection {
public:
  explicit LedgerSection(std::string label);
  ~LedgerSection();
  LedgerSection(const LedgerSection&) = delete;
  LedgerSection& operator=(const LedgerSection&) = delete;

private:
  std::shared_ptr<detail::LedgerState> state_;
};

/// RAII charge of `count` elements against the ledger that was active when
/// the charge was created. Copying creates a fresh charge on the currently
/// active ledger (a copy is a new allocation).
class LedgerCharge {
public:
  LedgerCharge() = default;
  explicit LedgerCharge(std::size_t count);
  ~LedgerCharge();
  LedgerCharge(const LedgerCharge& other);
  LedgerCharge(LedgerCharge&& other) noexcept;
  LedgerCharge& operator=(const LedgerCharge& other);
  LedgerCharge& operator=(LedgerCharge&& other) noexcept;

  std::size_t count() const { return count_; }

private:
  void release() noexcept;

  std::shared_ptr<detail::LedgerState> state_;
  std::size_t count_ = 0;
};

} // namespace d2net
