// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace climber {

Ablation parse_ablation(const std::string& name) {
  if (name == "nip") return Ablation::kNip;
  if (name == "mip") return Ablation::kMip;
  if (name == "tamip") return Ablation::kTamip;
  throw ConfigError("unknown ablation '" + name + "' (expected nip, mip or tamip)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kNip: return "nip";
    case Ablation::kMip: return "mip";
    case Ablation::kTamip: return "tamip";
  }
  return "tamip";
}

std::string to_string(Stage s) { return s == Stage::kPretrain ? "pretrain" : "sft"; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr_pretrain >= 0.0) || !(lr_sft >= 0.0)) fail("learning rates must be >= 0");
  if (!(lr_sft < lr_pretrain)) fail("lr_sft must be smaller than lr_pretrain");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (pretrain_steps < 0 || sft_steps < 0) fail("step counts must be >= 0");
  if (delta_tau < 0) fail("delta_tau must be >= 0");
  if (window_stride < 1) fail("window_stride must be >= 1");
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.lr_pretrain", format_double(lr_pretrain));
  kv.set("train.lr_sft", format_double(lr_sft));
  kv.set("train.weight_decay", format_double(weight_decay));
  kv.set("train.pretrain_steps", std::to_string(pretrain_steps));
  kv.set("train.sft_steps", std::to_string(sft_steps));
  kv.set("train.delta_tau", std::to_string(delta_tau));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.condition_family", to_string(family));
  kv.set("train.ablation", to_string(ablation));
  kv.set("train.window_stride", std::to_string(window_stride));
  kv.set("train.freeze_backbone", freeze_backbone ? "true" : "false");
  kv.set("train.pretrain_fraction", format_double(split.pretrain_fraction));
  kv.set("train.test_requests", std::to_string(split.test_requests));
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto has = [&](const char* k) { return kv.contains(k); };
  if (has("train.batch_size")) c.batch_size = static_cast<int>(kv.get_int("train.batch_size"));
  if (has("train.lr_pretrain")) c.lr_pretrain = kv.get_double("train.lr_pretrain");
  if (has("train.lr_sft")) c.lr_sft = kv.get_double("train.lr_sft");
  if (has("train.weight_decay")) c.weight_decay = kv.get_double("train.weight_decay");
  if (has("train.pretrain_steps")) c.pretrain_steps = static_cast<int>(kv.get_int("train.pretrain_steps"));
  if (has("train.sft_steps")) c.sft_steps = static_cast<int>(kv.get_int("train.sft_steps"));
  if (has("train.delta_tau")) c.delta_tau = kv.get_int("train.delta_tau");
  if (has("train.seed")) c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed"));
  if (has("train.condition_family")) c.family = parse_condition_family(kv.get("train.condition_family"));
  if (has("train.ablation")) c.ablation = parse_ablation(kv.get("train.ablation"));
  if (has("train.window_stride")) c.window_stride = static_cast<int>(kv.get_int("train.window_stride"));
  if (has("train.freeze_backbone")) c.freeze_backbone = kv.get_bool("train.freeze_backbone");
  if (has("train.pretrain_fraction")) c.split.pretrain_fraction = kv.get_double("train.pretrain_fraction");
  if (has("train.test_requests")) c.split.test_requests = static_cast<int>(kv.get_int("train.test_requests"));
  c.validate();
  return c;
}

std::vector<PretrainExample> build_pretrain_examples(const std::vector<UserLog>& users,
                                                     const SplitConfig& split, int horizon,
                                                     int stride) {
  if (horizon < 1) throw ConfigError("build_pretrain_examples: horizon must be >= 1");
  if (stride < 1) throw ConfigError("build_pretrain_examples: stride must be >= 1");
  std::vector<PretrainExample> out;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const UserSplit s = split_user_log(users[u], split);
    const auto h = static_cast<std::size_t>(horizon);
    for (std::size_t cut = 1; cut + h <= s.pretrain_end; ++cut)
      if (cut % static_cast<std::size_t>(stride) == 0) out.push_back({u, cut});
  }
  return out;
}

int condition_index(const ModelConfig& config, ConditionFamily family, int value) {
  switch (family) {
    case ConditionFamily::kGenre:
      if (value < 0 || value >= config.num_genres) break;
      return value;
    case ConditionFamily::kLanguage:
      if (value < 0 || value >= config.num_languages) break;
      return config.num_genres + value;
    case ConditionFamily::kRelease:
      if (value < 0 || value >= 2) break;
      return config.num_genres + config.num_languages + value;
  }
  throw DataError("condition " + std::to_string(value) + " is outside the " + to_string(family) +
                  " vocabulary");
}

std::span<const InteractionEvent> context_window(const UserLog& log, std::size_t cut, int max_len) {
  if (cut > log.events.size()) throw DataError("context_window: cut beyond the end of the log");
  const std::size_t len = std::min<std::size_t>(cut, static_cast<std::size_t>(max_len));
  return std::span<const InteractionEvent>(log.events).subspan(cut - len, len);
}

std::vector<Item> items_of(const Corpus& corpus, std::span<const InteractionEvent> events) {
  std::vector<Item> items;
  items.reserve(events.size());
  for (const InteractionEvent& e : events) items.push_back(corpus.at(e.item_id));
  return items;
}

AttentionMask backbone_mask(std::span<const InteractionEvent> context,
                            std::optional<std::int64_t> tau_target, std::int64_t delta_tau) {
  const auto n = static_cast<Index>(context.size());
  AttentionMask causal = build_causal_mask(n);
  if (!tau_target) return causal;
  std::vector<std::int64_t> ts;
  ts.reserve(context.size());
  for (const InteractionEvent& e : context) ts.push_back(e.ts);
  return combine({causal, build_temporal_mask(ts, *tau_target, delta_tau)});
}

AttentionMask sft_branch_mask(const Corpus& corpus, std::span<const InteractionEvent> context,
                              ConditionFamily family, int condition, int k) {
  const auto n = static_cast<Index>(context.size());
  std::vector<int> cats;
  cats.reserve(context.size());
  for (const InteractionEvent& e : context) cats.push_back(category_of(corpus.at(e.item_id), family));
  AttentionMask truncation;
  if (k <= n) {
    truncation = build_truncation_mask(n, k);
  } else {
    // Window S_{n-k+1} is empty.
    truncation = AttentionMask(n);
    for (Index j = 0; j < n; ++j) truncation.block_column(j);
    truncation.add_source(MaskSource::kTruncation);
  }
  return combine({build_causal_mask(n), build_condition_mask(cats, condition), truncation});
}

std::vector<std::int64_t> in_batch_candidates(const std::vector<std::vector<std::int64_t>>& targets) {
  std::vector<std::int64_t> out;
  std::unordered_map<std::int64_t, std::size_t> seen;
  for (const auto& row : targets)
    for (std::int64_t id : row)
      if (seen.emplace(id, out.size()).second) out.push_back(id);
  return out;
}

namespace {

// Sampled softmax for one head: row b scores targets[b] against every other
// candidate column.
Var head_loss(const Var& queries, const Var& candidates, const std::vector<std::int64_t>& candidate_ids,
              const std::vector<std::int64_t>& head_targets) {
  std::unordered_map<std::int64_t, Index> col;
  for (std::size_t c = 0; c < candidate_ids.size(); ++c) col.emplace(candidate_ids[c], static_cast<Index>(c));
  std::vector<Index> target;
  std::vector<std::vector<Index>> negatives;
  for (std::int64_t id : head_targets) {
    const Index t = col.at(id);
    target.push_back(t);
    auto& neg = negatives.emplace_back();
    neg.reserve(candidate_ids.size());
    for (Index c = 0; c < static_cast<Index>(candidate_ids.size()); ++c)
      if (c != t) neg.push_back(c);
  }
  return sampled_softmax_loss(queries, candidates, std::move(target), std::move(negatives));
}

LossTerms assemble(Tape& tape, const Model& model, const Corpus& corpus, const BackboneState& state,
                   const std::vector<std::vector<BranchQuery>>& head_queries,
                   const std::vector<std::vector<std::int64_t>>& head_targets) {
  // Candidate order: all targets example by example, head by head.
  std::vector<std::vector<std::int64_t>> by_example(head_targets.front().size());
  for (const auto& ht : head_targets)
    for (std::size_t b = 0; b < ht.size(); ++b) by_example[b].push_back(ht[b]);
  const auto candidate_ids = in_batch_candidates(by_example);
  std::vector<Item> candidate_items;
  candidate_items.reserve(candidate_ids.size());
  for (std::int64_t id : candidate_ids) candidate_items.push_back(corpus.at(id));
  const Var candidates = model.embed_items(tape, candidate_items);

  LossTerms terms;
  for (std::size_t k = 0; k < head_queries.size(); ++k) {
    const Var h = model.branch_forward(tape, state, static_cast<int>(k), head_queries[k]);
    terms.heads.push_back(head_loss(h, candidates, candidate_ids, head_targets[k]));
  }
  terms.total = add_scalars(terms.heads);
  return terms;
}

}  // namespace

LossTerms pretrain_loss(Tape& tape, const Model& model, const Corpus& corpus,
                        const PretrainBatch& batch, bool temporal, std::int64_t delta_tau) {
  const int K = model.config().num_branches;
  const std::size_t B = batch.logs.size();
  if (B == 0 || batch.cuts.size() != B) throw DataError("pretrain_loss: malformed batch");
  std::vector<SequenceInput> seqs;
  seqs.reserve(B);
  std::vector<std::vector<std::int64_t>> head_targets(static_cast<std::size_t>(K));
  for (std::size_t b = 0; b < B; ++b) {
    const UserLog& log = *batch.logs[b];
    const std::size_t cut = batch.cuts[b];
    if (cut == 0 || cut + static_cast<std::size_t>(K) > log.events.size())
      throw DataError("pretrain_loss: cut " + std::to_string(cut) + " leaves no history or too few targets");
    const auto ctx = context_window(log, cut, model.config().max_seq_len);
    const std::optional<std::int64_t> tau = temporal ? std::optional(log.events[cut].ts) : std::nullopt;
    seqs.push_back({items_of(corpus, ctx), backbone_mask(ctx, tau, delta_tau)});
    for (int k = 0; k < K; ++k)
      head_targets[static_cast<std::size_t>(k)].push_back(log.events[cut + static_cast<std::size_t>(k)].item_id);
  }
  const BackboneState state = model.encode(tape, seqs);
  std::vector<BranchQuery> queries;
  queries.reserve(B);
  for (std::size_t b = 0; b < B; ++b) queries.push_back({b, seqs[b].mask, std::nullopt});
  const std::vector<std::vector<BranchQuery>> head_queries(static_cast<std::size_t>(K), queries);
  return assemble(tape, model, corpus, state, head_queries, head_targets);
}

LossTerms sft_loss(Tape& tape, const Model& model, const Corpus& corpus, const SftBatch& batch,
                   ConditionFamily family, bool temporal, std::int64_t delta_tau) {
  const ModelConfig& mc = model.config();
  const int K = mc.num_branches;
  const std::size_t B = batch.logs.size();
  if (B == 0 || batch.targets.size() != B || batch.conditions.size() != B)
    throw DataError("sft_loss: malformed batch");
  std::vector<SequenceInput> seqs;
  std::vector<std::span<const InteractionEvent>> contexts;
  std::vector<std::int64_t> targets;
  for (std::size_t b = 0; b < B; ++b) {
    const UserLog& log = *batch.logs[b];
    const std::size_t t = batch.targets[b];
    if (t == 0 || t >= log.events.size()) throw DataError("sft_loss: target without history");
    const auto ctx = context_window(log, t, mc.max_seq_len);
    const std::optional<std::int64_t> tau = temporal ? std::optional(log.events[t].ts) : std::nullopt;
    seqs.push_back({items_of(corpus, ctx), backbone_mask(ctx, tau, delta_tau)});
    contexts.push_back(ctx);
    targets.push_back(log.events[t].item_id);
  }
  const BackboneState state = model.encode(tape, seqs);
  std::vector<std::vector<BranchQuery>> head_queries(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& qs = head_queries[static_cast<std::size_t>(k)];
    for (std::size_t b = 0; b < B; ++b) {
      std::optional<int> cond;
      if (mc.condition_embedding) cond = condition_index(mc, family, batch.conditions[b]);
      qs.push_back({b, sft_branch_mask(corpus, contexts[b], family, batch.conditions[b], k + 1), cond});
    }
  }
  const std::vector<std::vector<std::int64_t>> head_targets(static_cast<std::size_t>(K), targets);
  return assemble(tape, model, corpus, state, head_queries, head_targets);
}

std::vector<Parameter*> trainable_parameters(Model& model, Stage stage, bool freeze_backbone) {
  std::vector<Parameter*> out;
  for (Parameter* p : model.parameters()) {
    if (stage == Stage::kSft && freeze_backbone && p->name.rfind("branch.", 0) != 0 && p->name != "cond_emb")
      continue;
    out.push_back(p);
  }
  return out;
}

Trainer::Trainer(Model& model, const Corpus& corpus, const std::vector<UserLog>& users,
                 const TrainConfig& config, Stage stage)
    : model_(model),
      corpus_(corpus),
      users_(users),
      config_(config),
      stage_(stage),
      temporal_(config.ablation == Ablation::kTamip),
      optimizer_(AdamConfig{stage == Stage::kPretrain ? config.lr_pretrain : config.lr_sft, 0.9, 0.999, 1e-8,
                            config.weight_decay}),
      rng_(derive_seed(config.seed, stage == Stage::kPretrain ? 11 : 13)) {
  config_.validate();
  trainable_ = trainable_parameters(model_, stage_, config_.freeze_backbone);
  if (stage_ == Stage::kPretrain) {
    pretrain_examples_ =
        build_pretrain_examples(users_, config_.split, model_.config().num_branches, config_.window_stride);
  } else {
    SftDataset all = build_sft_dataset(corpus_, users_, config_.family, config_.split);
    sft_.family = all.family;
    skipped_ = all.skipped;
    const ModelConfig& mc = model_.config();
    const int vocab = config_.family == ConditionFamily::kGenre      ? mc.num_genres
                      : config_.family == ConditionFamily::kLanguage ? mc.num_languages
                                                                     : 2;
    for (const SftTriple& t : all.triples) {
      if (t.condition >= vocab) {
        ++skipped_;
        continue;
      }
      sft_.triples.push_back(t);
    }
  }
  if (num_examples() == 0) throw DataError("no " + to_string(stage_) + " training examples in the data");
  order_.resize(num_examples());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::size_t Trainer::num_examples() const {
  return stage_ == Stage::kPretrain ? pretrain_examples_.size() : sft_.triples.size();
}

std::vector<std::size_t> Trainer::next_indices() {
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(config_.batch_size), order_.size());
  std::vector<std::size_t> out;
  out.reserve(b);
  while (out.size() < b) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

StepResult Trainer::step() {
  const auto idx = next_indices();
  for (Parameter* p : model_.parameters()) p->zero_grad();
  Tape tape;
  LossTerms terms;
  if (stage_ == Stage::kPretrain) {
    PretrainBatch batch;
    for (std::size_t i : idx) {
      batch.logs.push_back(&users_[pretrain_examples_[i].user]);
      batch.cuts.push_back(pretrain_examples_[i].cut);
    }
    terms = pretrain_loss(tape, model_, corpus_, batch, temporal_, config_.delta_tau);
  } else {
    SftBatch batch;
    for (std::size_t i : idx) {
      const SftTriple& t = sft_.triples[i];
      batch.logs.push_back(&users_[t.user]);
      batch.targets.push_back(t.target);
      batch.conditions.push_back(t.condition);
    }
    terms = sft_loss(tape, model_, corpus_, batch, config_.family, temporal_, config_.delta_tau);
  }
  StepResult r;
  r.loss = terms.total.value()(0, 0);
  for (const Var& h : terms.heads) r.heads.push_back(h.value()(0, 0));
  r.degenerate_rows = tape.degenerate_rows();
  if (!std::isfinite(r.loss))
    throw NumericalError(to_string(stage_) + " step " + std::to_string(optimizer_.steps() + 1) +
                         ": non-finite loss");
  tape.backward(terms.total);
  optimizer_.step(trainable_);
  return r;
}

StageResult train_stage(Model& model, const Corpus& corpus, const std::vector<UserLog>& users,
                        const TrainConfig& config, Stage stage, std::ostream* loss_csv) {
  Trainer trainer(model, corpus, users, config, stage);
  const int steps = stage == Stage::kPretrain ? config.pretrain_steps : config.sft_steps;
  StageResult result;
  result.examples = trainer.num_examples();
  result.skipped = trainer.skipped_examples();
  if (loss_csv) {
    *loss_csv << "step,loss";
    for (int k = 1; k <= model.config().num_branches; ++k) *loss_csv << ",head_" << k;
    *loss_csv << '\n';
  }
  for (int s = 1; s <= steps; ++s) {
    StepResult r = trainer.step();
    if (loss_csv) {
      *loss_csv << s << ',' << format_double(r.loss);
      for (double h : r.heads) *loss_csv << ',' << format_double(h);
      *loss_csv << '\n';
    }
    result.curve.push_back(std::move(r));
  }
  return result;
}

ModelConfig model_config_for(ModelConfig base, Ablation ablation) {
  if (ablation == Ablation::kNip) base.num_branches = 1;
  return base;
}

KeyValues training_metadata(const TrainConfig& config, Stage stage) {
  KeyValues kv = config.to_key_values();
  kv.set("train.stage", to_string(stage));
  return kv;
}

}  // namespace climber
