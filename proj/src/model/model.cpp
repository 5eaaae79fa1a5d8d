// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace climber {

Index relative_bucket(Index query_pos, Index key_pos, int buckets_per_direction, int max_distance) {
  const Index rel = query_pos - key_pos;
  const Index side = rel >= 0 ? 0 : buckets_per_direction;
  const Index dist = rel >= 0 ? rel : -rel;
  const Index exact = std::max<Index>(1, buckets_per_direction / 2);
  if (dist < exact) return side + dist;
  const double span = std::max(static_cast<double>(max_distance) / static_cast<double>(exact), 1.0 + 1e-9);
  const double scaled = std::log(static_cast<double>(dist) / static_cast<double>(exact)) / std::log(span) *
                        static_cast<double>(buckets_per_direction - exact);
  const Index b = exact + static_cast<Index>(scaled);
  return side + std::min<Index>(b, buckets_per_direction - 1);
}

Index hash_bucket(std::int64_t item_id, int hash_buckets) {
  return static_cast<Index>(splitmix64(static_cast<std::uint64_t>(item_id)) %
                            static_cast<std::uint64_t>(hash_buckets));
}

namespace {

Tensor normal(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const Index d = config_.d;
  const Index id = config_.id_dim();
  const Index cat = config_.category_dim();
  std::uint64_t stream = 0;
  auto rng_for = [&](std::uint64_t s) { return std::mt19937_64(derive_seed(config_.init_seed, s)); };
  {
    auto rng = rng_for(stream++);
    add("emb.id", normal(config_.hash_buckets, id, 0.1, rng));
    add("emb.genre", normal(config_.num_genres, cat, 0.1, rng));
    add("emb.language", normal(config_.num_languages, cat, 0.1, rng));
    add("emb.release", normal(2, cat, 0.1, rng));
    add("emb.proj.w", normal(id + 3 * cat, d, 1.0 / std::sqrt(static_cast<double>(id + 3 * cat)), rng));
    add("emb.proj.b", Tensor::Zero(1, d));
  }
  {
    auto rng = rng_for(stream++);
    add("rel_bias", Tensor::Zero(config_.num_heads, 2 * config_.rel_buckets));
    if (config_.null_token) add("null.query", normal(1, d, 0.1, rng));
    if (config_.condition_embedding) add("cond_emb", normal(config_.num_conditions(), d, 0.1, rng));
  }
  for (int l = 0; l < config_.num_layers; ++l) add_layer("backbone." + std::to_string(l), stream);
  for (int k = 0; k < config_.num_branches; ++k) add_layer("branch." + std::to_string(k), stream);
}

Model::Model(const Model& other) : config_(other.config_) {
  for (const Parameter& p : other.params_) add(p.name, p.value);
}

Model& Model::operator=(const Model& other) {
  if (this == &other) return *this;
  config_ = other.config_;
  params_.clear();
  index_.clear();
  for (const Parameter& p : other.params_) add(p.name, p.value);
  return *this;
}

Parameter& Model::add(const std::string& name, Tensor value) {
  Parameter& p = params_.emplace_back(name, std::move(value));
  if (!index_.emplace(name, &p).second) throw ConfigError("duplicate parameter " + name);
  return p;
}

void Model::add_layer(const std::string& prefix, std::uint64_t& stream) {
  auto rng = std::mt19937_64(derive_seed(config_.init_seed, stream++));
  const Index d = config_.d;
  const Index hidden = static_cast<Index>(config_.ffn_mult) * d;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_out = s_in / std::sqrt(2.0 * static_cast<double>(config_.num_layers + 1));
  add(prefix + ".ln1.g", Tensor::Ones(1, d));
  add(prefix + ".ln1.b", Tensor::Zero(1, d));
  add(prefix + ".attn.wq", normal(d, d, s_in, rng));
  add(prefix + ".attn.bq", Tensor::Zero(1, d));
  add(prefix + ".attn.wk", normal(d, d, s_in, rng));
  add(prefix + ".attn.bk", Tensor::Zero(1, d));
  add(prefix + ".attn.wv", normal(d, d, s_in, rng));
  add(prefix + ".attn.bv", Tensor::Zero(1, d));
  add(prefix + ".attn.wo", normal(d, d, s_out, rng));
  add(prefix + ".attn.bo", Tensor::Zero(1, d));
  if (config_.null_token) {
    add(prefix + ".attn.null_k", normal(1, d, 0.02, rng));
    add(prefix + ".attn.null_v", normal(1, d, 0.02, rng));
  }
  add(prefix + ".ln2.g", Tensor::Ones(1, d));
  add(prefix + ".ln2.b", Tensor::Zero(1, d));
  add(prefix + ".ffn.w1", normal(d, hidden, s_in, rng));
  add(prefix + ".ffn.b1", Tensor::Zero(1, hidden));
  add(prefix + ".ffn.w2", normal(hidden, d, s_out / std::sqrt(static_cast<double>(config_.ffn_mult)), rng));
  add(prefix + ".ffn.b2", Tensor::Zero(1, d));
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back(&p);
  return out;
}

Parameter& Model::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named " + name);
  return *it->second;
}

const Parameter& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named " + name);
  return *it->second;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void Model::copy_branch(int from, int to) {
  const std::string src = "branch." + std::to_string(from) + ".";
  const std::string dst = "branch." + std::to_string(to) + ".";
  for (Parameter& p : params_)
    if (p.name.rfind(src, 0) == 0) param(dst + p.name.substr(src.size())).value = p.value;
}

Var Model::embed_items(Tape& tape, std::span<const Item> items) const {
  std::vector<Index> id_rows, genre_rows, lang_rows, release_rows;
  id_rows.reserve(items.size());
  for (const Item& it : items) {
    if (it.genre < 0 || it.genre >= config_.num_genres || it.language < 0 ||
        it.language >= config_.num_languages)
      throw DataError("item " + std::to_string(it.item_id) + " has a category outside the model vocabulary");
    id_rows.push_back(hash_bucket(it.item_id, config_.hash_buckets));
    genre_rows.push_back(it.genre);
    lang_rows.push_back(it.language);
    release_rows.push_back(static_cast<Index>(it.release));
  }
  const Var parts[] = {
      gather_rows(tape.param(param("emb.id")), std::move(id_rows)),
      gather_rows(tape.param(param("emb.genre")), std::move(genre_rows)),
      gather_rows(tape.param(param("emb.language")), std::move(lang_rows)),
      gather_rows(tape.param(param("emb.release")), std::move(release_rows)),
  };
  return add_row(matmul(concat_cols(parts), tape.param(param("emb.proj.w"))),
                 tape.param(param("emb.proj.b")));
}

Tensor Model::embed_items(std::span<const Item> items) const {
  Tape tape(false);
  return embed_items(tape, items).value();
}

Var Model::layer_forward(Tape& tape, const std::string& prefix, const Var& query_input,
                         const Var& kv_input, std::shared_ptr<const AttentionLayout> layout) const {
  auto P = [&](const std::string& name) { return tape.param(param(prefix + name)); };
  const Var g1 = P(".ln1.g"), b1 = P(".ln1.b");
  const Var q_norm = layer_norm(query_input, g1, b1);
  const Var kv_norm = query_input.id() == kv_input.id() ? q_norm : layer_norm(kv_input, g1, b1);
  const Var q = add_row(matmul(q_norm, P(".attn.wq")), P(".attn.bq"));
  const Var k = add_row(matmul(kv_norm, P(".attn.wk")), P(".attn.bk"));
  const Var v = add_row(matmul(kv_norm, P(".attn.wv")), P(".attn.bv"));
  AttentionParams extra;
  extra.rel_bias = tape.param(param("rel_bias"));
  if (config_.null_token) {
    extra.null_key = P(".attn.null_k");
    extra.null_value = P(".attn.null_v");
  }
  const Var attn = multi_head_attention(q, k, v, std::move(layout), extra);
  const Var h = climber::add(query_input, add_row(matmul(attn, P(".attn.wo")), P(".attn.bo")));
  const Var f = layer_norm(h, P(".ln2.g"), P(".ln2.b"));
  const Var hidden = gelu(add_row(matmul(f, P(".ffn.w1")), P(".ffn.b1")));
  return climber::add(h, add_row(matmul(hidden, P(".ffn.w2")), P(".ffn.b2")));
}

BackboneState Model::encode(Tape& tape, std::span<const SequenceInput> batch) const {
  if (batch.empty()) throw DataError("encode: empty batch");
  BackboneState state;
  std::vector<Item> items;
  auto layout = std::make_shared<AttentionLayout>();
  layout->heads = config_.num_heads;
  Index total = 0;
  for (const SequenceInput& s : batch) {
    const auto n = static_cast<Index>(s.items.size());
    if (n == 0) throw DataError("encode: empty sequence");
    if (n > config_.max_seq_len)
      throw DataError("encode: sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
    if (s.mask.size() != n) throw ConfigError("encode: mask size does not match sequence length");
    if (!s.mask.has_source(MaskSource::kCausal)) throw ConfigError("encode: backbone mask lacks the causal source");
    state.offset.push_back(total);
    state.length.push_back(n);
    layout->key_offset.push_back(total);
    layout->key_length.push_back(n);
    items.insert(items.end(), s.items.begin(), s.items.end());
    total += n;
  }
  std::vector<Index> buckets;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Index n = state.length[b];
    buckets.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j)
        buckets[static_cast<std::size_t>(j)] = relative_bucket(i, j, config_.rel_buckets, config_.max_seq_len);
      layout->add_query(static_cast<Index>(b), batch[b].mask.row(i), buckets);
    }
  }
  Var x = embed_items(tape, items);
  std::shared_ptr<const AttentionLayout> shared = std::move(layout);
  for (int l = 0; l < config_.num_layers; ++l)
    x = layer_forward(tape, "backbone." + std::to_string(l), x, x, shared);
  state.hidden = x;
  return state;
}

Var Model::condition_rows(Tape& tape, std::span<const BranchQuery> queries) const {
  const Index d = config_.d;
  const Index zero_row = config_.num_conditions();
  std::vector<Index> rows;
  rows.reserve(queries.size());
  for (const BranchQuery& q : queries) {
    if (q.condition && (*q.condition < 0 || *q.condition >= config_.num_conditions()))
      throw DataError("condition index " + std::to_string(*q.condition) + " outside the condition table");
    rows.push_back(q.condition ? *q.condition : zero_row);
  }
  const Var parts[] = {tape.param(param("cond_emb")), tape.constant(Tensor::Zero(1, d))};
  return gather_rows(concat_rows(parts), std::move(rows));
}

Var Model::branch_forward(Tape& tape, const BackboneState& state, int k,
                          std::span<const BranchQuery> queries) const {
  if (k < 0 || k >= config_.num_branches)
    throw ConfigError("branch index " + std::to_string(k + 1) + " outside [1, " +
                      std::to_string(config_.num_branches) + "]");
  if (queries.empty()) throw DataError("branch_forward: no queries");
  const Index d = config_.d;
  const Index total = state.hidden.rows();
  auto layout = std::make_shared<AttentionLayout>();
  layout->heads = config_.num_heads;
  layout->key_offset = state.offset;
  layout->key_length = state.length;

  // Query inputs are gathered from [hidden; null_query] so that an empty
  // window selects the null row.
  std::vector<Index> source_rows;
  std::vector<Index> buckets;
  std::vector<std::uint8_t> all_blocked;
  for (const BranchQuery& q : queries) {
    if (q.seq >= state.length.size()) throw ConfigError("branch_forward: query refers to a missing sequence");
    const Index n = state.length[q.seq];
    if (q.mask.size() != n) throw ConfigError("branch_forward: mask size does not match sequence length");
    buckets.resize(static_cast<std::size_t>(n));
    const auto pos = last_open_position(q.mask);
    if (pos) {
      source_rows.push_back(state.offset[q.seq] + *pos);
      for (Index j = 0; j < n; ++j)
        buckets[static_cast<std::size_t>(j)] = relative_bucket(*pos, j, config_.rel_buckets, config_.max_seq_len);
      layout->add_query(static_cast<Index>(q.seq), q.mask.row(*pos), buckets);
    } else {
      source_rows.push_back(total);
      all_blocked.assign(static_cast<std::size_t>(n), 1);
      std::fill(buckets.begin(), buckets.end(), 0);
      layout->add_query(static_cast<Index>(q.seq), all_blocked, buckets);
    }
  }
  const Var null_row = config_.null_token ? tape.param(param("null.query")) : tape.constant(Tensor::Zero(1, d));
  const Var table_parts[] = {state.hidden, null_row};
  Var query_input = gather_rows(concat_rows(table_parts), std::move(source_rows));
  if (config_.condition_embedding) {
    const bool any_condition =
        std::any_of(queries.begin(), queries.end(), [](const BranchQuery& q) { return q.condition.has_value(); });
    if (any_condition) query_input = climber::add(query_input, condition_rows(tape, queries));
  }
  return layer_forward(tape, "branch." + std::to_string(k), query_input, state.hidden, std::move(layout));
}

}  // namespace climber
