// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/model/config.hpp"

#include "climber/core/tensor.hpp"

namespace climber {

namespace {
constexpr int kConfigVersion = 1;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d < 8 || d % 8 != 0) fail("d must be a positive multiple of 8");
  if (num_heads < 1 || d % num_heads != 0) fail("d must be divisible by num_heads");
  if (num_layers < 0) fail("num_layers must be >= 0");
  if (num_branches < 1) fail("K (num_branches) must be >= 1");
  if (hash_buckets < 1) fail("hash_buckets must be >= 1");
  if (num_genres < 1 || num_languages < 1) fail("category vocabularies must be nonempty");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (rel_buckets < 2) fail("rel_buckets must be >= 2");
  if (ffn_mult < 1) fail("ffn_mult must be >= 1");
}

KeyValues ModelConfig::to_key_values() const {
  KeyValues kv;
  kv.set("model.version", std::to_string(kConfigVersion));
  kv.set("model.d", std::to_string(d));
  kv.set("model.num_layers", std::to_string(num_layers));
  kv.set("model.num_heads", std::to_string(num_heads));
  kv.set("model.num_branches", std::to_string(num_branches));
  kv.set("model.hash_buckets", std::to_string(hash_buckets));
  kv.set("model.num_genres", std::to_string(num_genres));
  kv.set("model.num_languages", std::to_string(num_languages));
  kv.set("model.max_seq_len", std::to_string(max_seq_len));
  kv.set("model.null_token", null_token ? "true" : "false");
  kv.set("model.condition_embedding", condition_embedding ? "true" : "false");
  kv.set("model.rel_buckets", std::to_string(rel_buckets));
  kv.set("model.ffn_mult", std::to_string(ffn_mult));
  kv.set("model.init_seed", std::to_string(init_seed));
  return kv;
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  if (kv.contains("model.version") && kv.get_int("model.version") != kConfigVersion)
    throw ConfigError("model config version " + kv.get("model.version") + " is not supported");
  auto get_int = [&](const char* key, int fallback) {
    return kv.contains(key) ? static_cast<int>(kv.get_int(key)) : fallback;
  };
  auto get_bool = [&](const char* key, bool fallback) {
    return kv.contains(key) ? kv.get_bool(key) : fallback;
  };
  c.d = get_int("model.d", c.d);
  c.num_layers = get_int("model.num_layers", c.num_layers);
  c.num_heads = get_int("model.num_heads", c.num_heads);
  c.num_branches = get_int("model.num_branches", c.num_branches);
  c.hash_buckets = get_int("model.hash_buckets", c.hash_buckets);
  c.num_genres = get_int("model.num_genres", c.num_genres);
  c.num_languages = get_int("model.num_languages", c.num_languages);
  c.max_seq_len = get_int("model.max_seq_len", c.max_seq_len);
  c.null_token = get_bool("model.null_token", c.null_token);
  c.condition_embedding = get_bool("model.condition_embedding", c.condition_embedding);
  c.rel_buckets = get_int("model.rel_buckets", c.rel_buckets);
  c.ffn_mult = get_int("model.ffn_mult", c.ffn_mult);
  if (kv.contains("model.init_seed")) c.init_seed = static_cast<std::uint64_t>(kv.get_int("model.init_seed"));
  c.validate();
  return c;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d);
  const std::size_t id = static_cast<std::size_t>(c.id_dim());
  const std::size_t cat = static_cast<std::size_t>(c.category_dim());
  const std::size_t conds = static_cast<std::size_t>(c.num_conditions());
  std::size_t n = static_cast<std::size_t>(c.hash_buckets) * id + conds * cat + (id + 3 * cat) * d + d;
  const std::size_t f = static_cast<std::size_t>(c.ffn_mult);
  const std::size_t per_layer = (4 + 2 * f) * d * d + (9 + f) * d + (c.null_token ? 2 * d : 0);
  n += static_cast<std::size_t>(c.num_layers + c.num_branches) * per_layer;
  n += static_cast<std::size_t>(c.num_heads) * 2 * static_cast<std::size_t>(c.rel_buckets);
  if (c.null_token) n += d;
  if (c.condition_embedding) n += conds * d;
  return n;
}

}  // namespace climber
