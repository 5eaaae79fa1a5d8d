// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "climber/data/types.hpp"

namespace climber {

// Item list plus id lookup. Rows keep insertion order.
class Corpus {
 public:
  Corpus() = default;
  // Vocabulary sizes default to max id + 1; explicit sizes are validated.
  explicit Corpus(std::vector<Item> items, int num_genres = 0, int num_languages = 0);

  const std::vector<Item>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Item& at(std::int64_t item_id) const;
  bool contains(std::int64_t item_id) const { return row_.contains(item_id); }
  std::size_t row_of(std::int64_t item_id) const;

  int num_genres() const { return num_genres_; }
  int num_languages() const { return num_languages_; }
  int vocab_size(ConditionFamily family) const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::int64_t, std::size_t> row_;
  int num_genres_ = 0;
  int num_languages_ = 0;
};

}  // namespace climber
