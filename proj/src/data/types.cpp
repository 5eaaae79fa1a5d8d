// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/data/types.hpp"

#include <algorithm>
#include <stdexcept>

#include "climber/core/tensor.hpp"
#include "climber/data/corpus.hpp"

namespace climber {

ConditionFamily parse_condition_family(const std::string& name) {
  if (name == "genre") return ConditionFamily::kGenre;
  if (name == "language") return ConditionFamily::kLanguage;
  if (name == "release") return ConditionFamily::kRelease;
  throw ConfigError("unknown condition family '" + name + "' (expected genre, language or release)");
}

std::string to_string(ConditionFamily family) {
  switch (family) {
    case ConditionFamily::kGenre: return "genre";
    case ConditionFamily::kLanguage: return "language";
    case ConditionFamily::kRelease: return "release";
  }
  return "genre";
}

int category_of(const Item& item, ConditionFamily family) {
  switch (family) {
    case ConditionFamily::kGenre: return item.genre;
    case ConditionFamily::kLanguage: return item.language;
    case ConditionFamily::kRelease: return static_cast<int>(item.release);
  }
  return item.genre;
}

Corpus::Corpus(std::vector<Item> items, int num_genres, int num_languages)
    : items_(std::move(items)), num_genres_(num_genres), num_languages_(num_languages) {
  const int declared_genres = num_genres;
  const int declared_languages = num_languages;
  row_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    if (!row_.emplace(it.item_id, i).second)
      throw DataError("corpus: duplicate item_id " + std::to_string(it.item_id));
    if (it.genre < 0 || it.language < 0) throw DataError("corpus: negative category id");
    num_genres_ = std::max(num_genres_, it.genre + 1);
    num_languages_ = std::max(num_languages_, it.language + 1);
  }
  if ((declared_genres > 0 && num_genres_ > declared_genres) ||
      (declared_languages > 0 && num_languages_ > declared_languages))
    throw DataError("corpus: category id outside the declared vocabulary");
}

const Item& Corpus::at(std::int64_t item_id) const { return items_[row_of(item_id)]; }

std::size_t Corpus::row_of(std::int64_t item_id) const {
  auto it = row_.find(item_id);
  if (it == row_.end()) throw DataError("unknown item_id " + std::to_string(item_id));
  return it->second;
}

int Corpus::vocab_size(ConditionFamily family) const {
  switch (family) {
    case ConditionFamily::kGenre: return num_genres_;
    case ConditionFamily::kLanguage: return num_languages_;
    case ConditionFamily::kRelease: return 2;
  }
  return 0;
}

}  // namespace climber
