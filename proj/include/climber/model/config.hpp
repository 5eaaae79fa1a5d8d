// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "climber/core/key_values.hpp"

namespace climber {

struct ModelConfig {
  int d = 32;
  int num_layers = 3;    // L backbone layers
  int num_heads = 2;
  int num_branches = 2;  // K
  int hash_buckets = 4096;
  int num_genres = 20;
  int num_languages = 5;
  int max_seq_len = 50;
  bool null_token = true;
  bool condition_embedding = true;
  int rel_buckets = 16;  // per direction
  int ffn_mult = 4;
  std::uint64_t init_seed = 1;

  int id_dim() const { return d / 2; }
  int category_dim() const { return d / 8 > 0 ? d / 8 : 1; }
  // Rows of the condition table: genres, then languages, then release buckets.
  int num_conditions() const { return num_genres + num_languages + 2; }

  void validate() const;

  // model.* keys; version is checked on parse.
  KeyValues to_key_values() const;
  static ModelConfig from_key_values(const KeyValues& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Closed-form parameter count:
//   embeddings: H*d/2 + (G + Lg + 2)*d/8 + (d/2 + 3*d/8)*d + d
//   per transformer layer (L + K of them), f = ffn_mult:
//     (4 + 2f)d^2 + (9 + f)d, plus 2d with null token (12d^2 + 13d at f = 4)
//   relative bias: heads * 2 * rel_buckets
//   null query: d (null token); condition table: (G + Lg + 2) * d
std::size_t expected_parameter_count(const ModelConfig& c);

}  // namespace climber
