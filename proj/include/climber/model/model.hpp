// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "climber/core/autodiff.hpp"
#include "climber/data/types.hpp"
#include "climber/masking/mask.hpp"
#include "climber/model/config.hpp"

namespace climber {

// Relative-position bias column for a (query, key) pair. Offsets 0..b/2-1 get
// their own bucket, larger offsets share log-spaced buckets up to max_distance;
// negative offsets use a mirrored second block of b buckets.
Index relative_bucket(Index query_pos, Index key_pos, int buckets_per_direction, int max_distance);

// Hash-table row for an item id.
Index hash_bucket(std::int64_t item_id, int hash_buckets);

struct SequenceInput {
  std::vector<Item> items;  // context, oldest first
  AttentionMask mask;       // backbone mask; must include the causal source
};

// Backbone hidden states of a ragged batch, stacked row-wise.
struct BackboneState {
  Var hidden;
  std::vector<Index> offset;
  std::vector<Index> length;
};

struct BranchQuery {
  std::size_t seq = 0;  // index into the encoded batch
  AttentionMask mask;   // branch mask over that sequence's positions
  // Row of the condition table added to the query input; empty for none.
  std::optional<int> condition;
};

// Degenerate attention rows (every key blocked, no null slot) are counted on
// the tape that ran the forward pass; see Tape::degenerate_rows().
//
// Fused-embedding transformer with L shared backbone layers and K independent
// single-layer branches.
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model& other);
  Model& operator=(const Model& other);

  const ModelConfig& config() const { return config_; }

  // Stable order: creation order. Names are unique.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  std::size_t parameter_count() const;

  // concat(id, genre, language, release embeddings) -> linear -> d. One row per item.
  Var embed_items(Tape& tape, std::span<const Item> items) const;
  Tensor embed_items(std::span<const Item> items) const;

  BackboneState encode(Tape& tape, std::span<const SequenceInput> batch) const;

  // Branch k (0-based) over cached backbone states; one output row per query.
  // The query row is the last position left open by the query's mask. With
  // no open position the query input is the learned null query (zeros when
  // the null token is disabled).
  Var branch_forward(Tape& tape, const BackboneState& state, int k,
                     std::span<const BranchQuery> queries) const;

  // Copies every parameter of branch `from` into branch `to`.
  void copy_branch(int from, int to);

 private:
  Parameter& add(const std::string& name, Tensor value);
  void add_layer(const std::string& prefix, std::uint64_t& stream);
  Var layer_forward(Tape& tape, const std::string& prefix, const Var& query_input, const Var& kv_input,
                    std::shared_ptr<const AttentionLayout> layout) const;
  Var condition_rows(Tape& tape, std::span<const BranchQuery> queries) const;

  ModelConfig config_;
  std::deque<Parameter> params_;
  std::map<std::string, Parameter*> index_;
};

}  // namespace climber
