// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/masking/mask.hpp"

#include <sstream>
#include <vector>

namespace climber {

AttentionMask::AttentionMask(Index n) : blocked_(MatrixT<std::uint8_t>::Zero(n, n)) {}

std::string AttentionMask::to_grid() const {
  std::string out;
  out.reserve(static_cast<std::size_t>(size() * (size() + 1)));
  for (Index i = 0; i < size(); ++i) {
    for (Index j = 0; j < size(); ++j) out.push_back(blocked(i, j) ? 'X' : '.');
    out.push_back('\n');
  }
  return out;
}

AttentionMask AttentionMask::from_grid(const std::string& grid) {
  std::vector<std::string> lines;
  std::istringstream in(grid);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  AttentionMask m(static_cast<Index>(lines.size()));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].size() != lines.size()) throw DataError("mask grid is not square");
    for (std::size_t j = 0; j < lines[i].size(); ++j) {
      const char c = lines[i][j];
      if (c == 'X')
        m.block(static_cast<Index>(i), static_cast<Index>(j));
      else if (c != '.')
        throw DataError(std::string("mask grid: unexpected character '") + c + "'");
    }
  }
  return m;
}

AttentionMask build_causal_mask(Index n) {
  if (n <= 0) throw DataError("build_causal_mask: empty sequence");
  AttentionMask m(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) m.block(i, j);
  m.add_source(MaskSource::kCausal);
  return m;
}

AttentionMask build_temporal_mask(std::span<const std::int64_t> timestamps, std::int64_t tau_target,
                                  std::int64_t delta_tau) {
  const auto n = static_cast<Index>(timestamps.size());
  if (n == 0) throw DataError("build_temporal_mask: empty sequence");
  if (delta_tau < 0) throw ConfigError("build_temporal_mask: delta_tau must be >= 0");
  for (std::size_t j = 1; j < timestamps.size(); ++j)
    if (timestamps[j] < timestamps[j - 1])
      throw DataError("build_temporal_mask: timestamps must be nondecreasing");
  AttentionMask m(n);
  const std::int64_t lo = tau_target - delta_tau;
  for (Index j = 0; j < n; ++j) {
    const std::int64_t t = timestamps[static_cast<std::size_t>(j)];
    if (t >= lo && t <= tau_target) m.block_column(j);
  }
  m.add_source(MaskSource::kTemporal);
  return m;
}

AttentionMask build_condition_mask(std::span<const int> categories, int condition) {
  const auto n = static_cast<Index>(categories.size());
  if (n == 0) throw DataError("build_condition_mask: empty sequence");
  AttentionMask m(n);
  for (Index j = 0; j < n; ++j)
    if (categories[static_cast<std::size_t>(j)] != condition) m.block_column(j);
  m.add_source(MaskSource::kSparse);
  return m;
}

AttentionMask build_truncation_mask(Index n, Index k) {
  if (n <= 0) throw DataError("build_truncation_mask: empty sequence");
  if (k < 1 || k > n)
    throw ConfigError("build_truncation_mask: branch " + std::to_string(k) + " outside [1, " +
                      std::to_string(n) + "]");
  AttentionMask m(n);
  // 0-based column j is 1-based position j + 1; open iff j + 1 <= n - k + 1.
  for (Index j = n - k + 1; j < n; ++j) m.block_column(j);
  m.add_source(MaskSource::kTruncation);
  return m;
}

AttentionMask combine(std::span<const AttentionMask> masks) {
  if (masks.empty()) throw ConfigError("combine: no masks");
  AttentionMask out = masks[0];
  for (std::size_t s = 1; s < masks.size(); ++s) {
    const AttentionMask& m = masks[s];
    if (m.size() != out.size())
      throw ConfigError("combine: length mismatch " + std::to_string(out.size()) + " vs " +
                        std::to_string(m.size()));
    for (Index i = 0; i < out.size(); ++i)
      for (Index j = 0; j < out.size(); ++j)
        if (m.blocked(i, j)) out.block(i, j);
    for (auto src : {MaskSource::kCausal, MaskSource::kTemporal, MaskSource::kSparse,
                     MaskSource::kTruncation})
      if (m.has_source(src)) out.add_source(src);
  }
  return out;
}

AttentionMask combine(std::initializer_list<AttentionMask> masks) {
  return combine(std::span<const AttentionMask>(masks.begin(), masks.size()));
}

std::optional<Index> last_open_position(const AttentionMask& mask) {
  const Index n = mask.size();
  for (Index j = n; j-- > 0;)
    if (!mask.blocked(n - 1, j)) return j;
  return std::nullopt;
}

}  // namespace climber
