#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/nn.hpp"
#include "mcl/random.hpp"

namespace mcl {

struct ReplayEntry {
  std::vector<double> input;
  std::size_t label = 0;
  std::vector<double> logits;  // snapshot taken at insertion, never refreshed

  bool operator==(const ReplayEntry&) const = default;
};

/// Fixed-capacity reservoir of past examples and the logits the model emitted for them.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t seen_count() const { return seen_; }
  const std::vector<ReplayEntry>& entries() const { return entries_; }

  /// Reservoir policy: the n-th offered item is kept with probability capacity/n
  /// and, once full, replaces a uniformly chosen slot.
  void insert(ReplayEntry e, Rng& rng) {
    if (!entries_.empty()) {
      detail::require(e.logits.size() == entries_.front().logits.size(), "stored logit width mismatch");
      detail::require(e.input.size() == entries_.front().input.size(), "stored input width mismatch");
    }
    ++seen_;
    if (capacity_ == 0) return;
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(e));
      return;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    const auto j = pick(rng);
    if (j < capacity_) entries_[j] = std::move(e);
  }

  bool operator==(const ReplayBuffer&) const = default;

 private:
  std::size_t capacity_;
  std::vector<ReplayEntry> entries_;
  std::uint64_t seen_ = 0;
};

inline void reservoir_insert(ReplayBuffer& buf, ReplayEntry e, Rng& rng) { buf.insert(std::move(e), rng); }

struct ReplaySample {
  Batch batch;
  Matrix logits;  // stored logits, row-aligned with batch
};

/// k entries drawn uniformly with replacement.
inline ReplaySample buffer_sample(const ReplayBuffer& buf, std::size_t k, Rng& rng) {
  if (buf.empty()) throw EmptyBufferError();
  detail::require(k >= 1, "replay draw size must be positive");
  const auto& entries = buf.entries();
  const std::size_t in = entries.front().input.size();
  const std::size_t c = entries.front().logits.size();
  ReplaySample s{Batch{Matrix(k, in), {}}, Matrix(k, c)};
  s.batch.labels.reserve(k);
  std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);
  for (std::size_t r = 0; r < k; ++r) {
    const auto& e = entries[pick(rng)];
    std::copy(e.input.begin(), e.input.end(), s.batch.inputs.row(r).begin());
    std::copy(e.logits.begin(), e.logits.end(), s.logits.row(r).begin());
    s.batch.labels.push_back(e.label);
  }
  return s;
}

}  // namespace mcl
