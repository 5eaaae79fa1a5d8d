// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/eval/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace climber {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

bool ranks_before(double sa, std::int64_t ia, double sb, std::int64_t ib) {
  return sa > sb || (sa == sb && ia < ib);
}

}  // namespace

std::string model_fingerprint(const Model& model) {
  std::uint64_t h = kFnvOffset;
  for (const Parameter* p : model.parameters()) {
    fnv(h, p->name.data(), p->name.size());
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    fnv(h, shape, sizeof shape);
    fnv(h, p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(Scalar));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RetrievalIndex::RetrievalIndex(std::vector<std::int64_t> ids, Tensor embeddings, std::string source)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)), source_(std::move(source)) {
  if (static_cast<Index>(ids_.size()) != embeddings_.rows())
    throw DataError("RetrievalIndex: " + std::to_string(ids_.size()) + " ids for " +
                    std::to_string(embeddings_.rows()) + " embedding rows");
}

RowVector RetrievalIndex::scores(const RowVector& query) const {
  if (query.size() != dim())
    throw ConfigError("RetrievalIndex: query dim " + std::to_string(query.size()) + " != " +
                      std::to_string(dim()));
  return query * embeddings_.transpose();
}

RetrievalIndex build_index(const Model& model, const Corpus& corpus) {
  if (corpus.size() == 0) throw DataError("build_index: empty corpus");
  std::vector<std::int64_t> ids;
  ids.reserve(corpus.size());
  for (const Item& item : corpus.items()) ids.push_back(item.item_id);
  return RetrievalIndex(std::move(ids), model.embed_items(corpus.items()), model_fingerprint(model));
}

std::vector<std::int64_t> top_k(const RetrievalIndex& index, const RowVector& query, Index k) {
  if (k < 0 || k > index.size())
    throw ConfigError("top_k: K=" + std::to_string(k) + " outside [0, " + std::to_string(index.size()) + "]");
  if (k == 0) return {};
  const RowVector s = index.scores(query);
  const auto& ids = index.ids();
  std::vector<Index> order(static_cast<std::size_t>(index.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    return ranks_before(s(a), ids[static_cast<std::size_t>(a)], s(b), ids[static_cast<std::size_t>(b)]);
  });
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) out.push_back(ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  return out;
}

Index rank_of(const RetrievalIndex& index, const RowVector& query, std::int64_t item_id) {
  return rank_from_scores(index, index.scores(query), item_id);
}

Index rank_from_scores(const RetrievalIndex& index, const RowVector& s, std::int64_t item_id) {
  if (s.size() != index.size()) throw ConfigError("rank_from_scores: score vector size mismatch");
  const auto& ids = index.ids();
  const auto it = std::find(ids.begin(), ids.end(), item_id);
  if (it == ids.end()) throw DataError("rank_of: item " + std::to_string(item_id) + " not in the index");
  const auto row = static_cast<Index>(it - ids.begin());
  Index rank = 1;
  for (Index i = 0; i < index.size(); ++i)
    if (i != row && ranks_before(s(i), ids[static_cast<std::size_t>(i)], s(row), item_id)) ++rank;
  return rank;
}

}  // namespace climber
