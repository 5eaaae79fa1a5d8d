// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "climber/core/tensor.hpp"
#include "climber/data/corpus.hpp"
#include "climber/model/model.hpp"

namespace climber {

// FNV-1a over parameter names, shapes and values, as 16 hex digits.
std::string model_fingerprint(const Model& model);

// Exact inner-product index over the whole corpus. Row i belongs to ids()[i].
class RetrievalIndex {
 public:
  RetrievalIndex(std::vector<std::int64_t> ids, Tensor embeddings, std::string source);

  const std::vector<std::int64_t>& ids() const { return ids_; }
  const Tensor& embeddings() const { return embeddings_; }
  const std::string& source() const { return source_; }
  Index size() const { return static_cast<Index>(ids_.size()); }
  Index dim() const { return embeddings_.cols(); }

  RowVector scores(const RowVector& query) const;

 private:
  std::vector<std::int64_t> ids_;
  Tensor embeddings_;
  std::string source_;
};

RetrievalIndex build_index(const Model& model, const Corpus& corpus);

// Descending score, ties by ascending item id. K = 0 gives an empty list.
std::vector<std::int64_t> top_k(const RetrievalIndex& index, const RowVector& query, Index k);

// 1-based rank of `item_id` under the top_k ordering.
Index rank_of(const RetrievalIndex& index, const RowVector& query, std::int64_t item_id);

// Same, from precomputed index.scores(query).
Index rank_from_scores(const RetrievalIndex& index, const RowVector& scores, std::int64_t item_id);

}  // namespace climber
