// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "climber/core/tensor.hpp"

namespace climber {

enum class MaskSource : std::uint8_t {
  kCausal = 1u << 0,
  kTemporal = 1u << 1,
  kSparse = 1u << 2,
  kTruncation = 1u << 3,
};

// Additive attention bias with entries restricted to {0, -inf}. Stored as a
// dense n x n grid of blocked flags; entry() materializes the additive value.
class AttentionMask {
 public:
  static constexpr Scalar kBlocked = -std::numeric_limits<Scalar>::infinity();

  AttentionMask() = default;
  // All-open mask of size n with no provenance.
  explicit AttentionMask(Index n);

  Index size() const { return blocked_.rows(); }
  bool blocked(Index i, Index j) const { return blocked_(i, j) != 0; }
  Scalar entry(Index i, Index j) const { return blocked(i, j) ? kBlocked : 0.0; }
  std::span<const std::uint8_t> row(Index i) const {
    return {blocked_.data() + i * blocked_.cols(), static_cast<std::size_t>(blocked_.cols())};
  }
  const MatrixT<std::uint8_t>& blocked_matrix() const { return blocked_; }

  bool has_source(MaskSource s) const { return (provenance_ & static_cast<std::uint8_t>(s)) != 0; }
  std::uint8_t provenance() const { return provenance_; }

  void block(Index i, Index j) { blocked_(i, j) = 1; }
  void block_column(Index j) { blocked_.col(j).setOnes(); }
  void add_source(MaskSource s) { provenance_ |= static_cast<std::uint8_t>(s); }

  // One line per query row, '.' for open and 'X' for blocked.
  std::string to_grid() const;
  static AttentionMask from_grid(const std::string& grid);

  friend bool operator==(const AttentionMask& a, const AttentionMask& b) {
    return a.provenance_ == b.provenance_ && a.blocked_ == b.blocked_;
  }

 private:
  MatrixT<std::uint8_t> blocked_;
  std::uint8_t provenance_ = 0;
};

// entry(i, j) = -inf iff j > i.
AttentionMask build_causal_mask(Index n);

// Column j is blocked for every row iff timestamps[j] lies in the closed
// window [tau_target - delta_tau, tau_target].
AttentionMask build_temporal_mask(std::span<const std::int64_t> timestamps, std::int64_t tau_target,
                                  std::int64_t delta_tau);

// Column j is open for every row iff categories[j] == condition.
AttentionMask build_condition_mask(std::span<const int> categories, int condition);

// Window S_{n-k+1}: columns at 1-based positions > n - k + 1 are blocked.
// k is 1-based; k = 1 keeps the full history.
AttentionMask build_truncation_mask(Index n, Index k);

// Union of blocked entries; provenance is the union of source tags.
AttentionMask combine(std::span<const AttentionMask> masks);
AttentionMask combine(std::initializer_list<AttentionMask> masks);

// Last column left open in the final row: the query position for a branch
// reading this mask. Empty when every column of the final row is blocked.
std::optional<Index> last_open_position(const AttentionMask& mask);

}  // namespace climber
