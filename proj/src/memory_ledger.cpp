// Copyright 2026 The D2Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "d2net/memory_ledger.hpp"

#include <algorithm>
#include <utility>

namespace d2net {

namespace detail {

struct LedgerState {
  struct Frame {
    std::string label;
    std::size_t total_at_push = 0;
    std::size_t peak = 0;
  };

  std::size_t current = 0;
  std::size_t peak = 0;
  std::size_t total = 0;
  std::vector<Frame> open;
  std::vector<MemoryLedger::Record> records;

  void allocate(std::size_t n) {
    current += n;
    total += n;
    peak = std::max(peak, current);
    for (auto& f : open) f.peak = std::max(f.peak, current);
  }
  void release(std::size_t n) { current -= std::min(n, current); }
};

namespace {
thread_local std::shared_ptr<LedgerState> active_ledger;
}

} // namespace detail

MemoryLedger::MemoryLedger() : state_(std::make_shared<detail::LedgerState>()) {}

std::size_t MemoryLedger::current() const { return state_->current; }
std::size_t MemoryLedger::peak() const { return state_->peak; }
std::size_t MemoryLedger::total_allocated() const { return state_->total; }

void MemoryLedger::push(std::string label) {
  state_->open.push_back({std::move(label), state_->total, state_->current});
}

void MemoryLedger::pop() {
  if (state_->open.empty()) return;
  auto frame = std::move(state_->open.back());
  state_->open.pop_back();
  state_->records.push_back({std::move(frame.label), state_->total - frame.total_at_push, frame.peak});
}

const std::vector<MemoryLedger::Record>& MemoryLedger::records() const { return state_->records; }

void MemoryLedger::reset_peak() { state_->peak = state_->current; }

LedgerScope::LedgerScope(MemoryLedger& ledger) : previous_(detail::active_ledger) {
  detail::active_ledger = ledger.state();
}

LedgerScope::~LedgerScope() { detail::active_ledger = std::move(previous_); }

LedgerSection::LedgerSection(std::string label) : state_(detail::active_ledger) {
  if (state_) state_->open.push_back({std::move(label), state_->total, state_->current});
}

LedgerSection::~LedgerSection() {
  if (!state_ || state_->open.empty()) return;
  auto frame = std::move(state_->open.back());
  state_->open.pop_back();
  state_->records.push_back({std::move(frame.label), state_->total - frame.total_at_push, frame.peak});
}

LedgerCharge::LedgerCharge(std::size_t count) : state_(detail::active_ledger), count_(count) {
  if (state_) state_->allocate(count_);
}

LedgerCharge::~LedgerCharge() { release(); }

LedgerCharge::LedgerCharge(const LedgerCharge& other) : LedgerCharge(other.count_) {}

LedgerCharge::LedgerCharge(LedgerCharge&& other) noexcept
    : state_(std::move(other.state_)), count_(std::exchange(other.count_, 0)) {}

LedgerCharge& LedgerCharge::operator=(const LedgerCharge& other) {
  if (this != &other) {
    release();
    state_ = detail::active_ledger;
    count_ = other.count_;
    if (state_) state_->allocate(count_);
  }
  return *this;
}

LedgerCharge& LedgerCharge::operator=(LedgerCharge&& other) noexcept {
  if (this != &other) {
    release();
    state_ = std::move(other.state_);
    count_ = std::exchange(other.count_, 0);
  }
  return *this;
}

void LedgerCharge::release() noexcept {
  if (state_) state_->release(count_);
  state_.reset();
  count_ = 0;
}

} // namespace d2net
