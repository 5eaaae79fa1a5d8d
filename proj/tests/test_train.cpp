// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "climber/data/synth.hpp"
#include "climber/train/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace climber;
using climber::testing::oracle_head_loss;
using climber::testing::oracle_query;
using climber::testing::small_synth;

namespace {

ModelConfig config_for(const Corpus& corpus, int K = 2) {
  ModelConfig c;
  c.num_genres = corpus.num_genres();
  c.num_languages = corpus.num_languages();
  c.hash_buckets = 512;
  c.num_branches = K;
  return c;
}

struct Fixture {
  Dataset ds = generate_dataset(small_synth(40));
  std::vector<PretrainExample> examples = build_pretrain_examples(ds.users, SplitConfig{}, 2, 1);
};

}  // namespace

TEST_CASE("pre-training examples") {
  const Fixture f;
  for (const PretrainExample& e : f.examples) {
    const UserSplit s = split_user_log(f.ds.users[e.user], SplitConfig{});
    CHECK(e.cut >= 1);
    CHECK(e.cut + 2 <= s.pretrain_end);
  }
  CHECK(f.examples.size() == 40 * (35 - 2));
  for (const PretrainExample& e : build_pretrain_examples(f.ds.users, SplitConfig{}, 1, 5)) CHECK(e.cut % 5 == 0);
}

TEST_CASE("in-batch candidates are unique, first-seen order") {
  const auto c = in_batch_candidates({{5, 7}, {7, 9}, {5, 5}});
  CHECK(c == std::vector<std::int64_t>{5, 7, 9});
}

TEST_CASE("pre-training loss equals independently recomputed head losses") {
  const Fixture f;
  for (bool temporal : {false, true}) {
    const Model m(config_for(f.ds.corpus, 3));
    PretrainBatch batch;
    std::set<std::int64_t> candidates;
    std::vector<std::vector<std::int64_t>> targets(3);
    for (std::size_t i = 0; i < 12; ++i) {
      const PretrainExample& e = f.examples[i * 97 % f.examples.size()];
      const UserLog& log = f.ds.users[e.user];
      if (e.cut + 3 > split_user_log(log, SplitConfig{}).pretrain_end) continue;
      batch.logs.push_back(&log);
      batch.cuts.push_back(e.cut);
      for (int k = 0; k < 3; ++k) {
        targets[static_cast<std::size_t>(k)].push_back(log.events[e.cut + static_cast<std::size_t>(k)].item_id);
        candidates.insert(targets[static_cast<std::size_t>(k)].back());
      }
    }
    REQUIRE(batch.logs.size() >= 8);
    Tape tape;
    const LossTerms t = pretrain_loss(tape, m, f.ds.corpus, batch, temporal, 900);
    double sum = 0;
    for (int k = 0; k < 3; ++k) {
      std::vector<RowVector> q;
      for (std::size_t b = 0; b < batch.logs.size(); ++b) {
        const auto tau = temporal ? std::optional(batch.logs[b]->events[batch.cuts[b]].ts) : std::nullopt;
        q.push_back(oracle_query(m, f.ds.corpus, *batch.logs[b], batch.cuts[b], k, tau, 900, std::nullopt,
                                 ConditionFamily::kGenre));
      }
      const double head = oracle_head_loss(q, targets[static_cast<std::size_t>(k)], candidates, m, f.ds.corpus);
      CHECK(std::abs(t.heads[static_cast<std::size_t>(k)].value()(0, 0) - head) < 1e-10);
      sum += head;
    }
    CHECK(std::abs(t.total.value()(0, 0) - sum) < 1e-10);
  }
}

TEST_CASE("SFT loss equals independently recomputed head losses") {
  const Fixture f;
  const SftDataset sft = build_sft_dataset(f.ds.corpus, f.ds.users, ConditionFamily::kGenre, SplitConfig{});
  for (bool temporal : {false, true}) {
    const Model m(config_for(f.ds.corpus, 3));
    SftBatch batch;
    for (std::size_t i = 0; i < 16; ++i) {
      const SftTriple& t = sft.triples[i * 13 % sft.triples.size()];
      batch.logs.push_back(&f.ds.users[t.user]);
      batch.targets.push_back(t.target);
      batch.conditions.push_back(t.condition);
    }
    std::set<std::int64_t> candidates;
    std::vector<std::int64_t> targets;
    for (std::size_t b = 0; b < 16; ++b) {
      targets.push_back(batch.logs[b]->events[batch.targets[b]].item_id);
      candidates.insert(targets.back());
    }
    Tape tape;
    const LossTerms t = sft_loss(tape, m, f.ds.corpus, batch, ConditionFamily::kGenre, temporal, 900);
    double sum = 0;
    for (int k = 0; k < 3; ++k) {
      std::vector<RowVector> q;
      for (std::size_t b = 0; b < 16; ++b) {
        const auto tau = temporal ? std::optional(batch.logs[b]->events[batch.targets[b]].ts) : std::nullopt;
        q.push_back(oracle_query(m, f.ds.corpus, *batch.logs[b], batch.targets[b], k, tau, 900,
                                 batch.conditions[b], ConditionFamily::kGenre));
      }
      const double head = oracle_head_loss(q, targets, candidates, m, f.ds.corpus);
      CHECK(std::abs(t.heads[static_cast<std::size_t>(k)].value()(0, 0) - head) < 1e-10);
      sum += head;
    }
    CHECK(std::abs(t.total.value()(0, 0) - sum) < 1e-10);
  }
}

TEST_CASE("K = 1 pre-training is next-item prediction, bitwise") {
  const Fixture f;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.pretrain_steps = 5;
  tc.ablation = Ablation::kNip;
  Model nip(model_config_for(config_for(f.ds.corpus), Ablation::kNip));
  CHECK(nip.config().num_branches == 1);
  const StageResult a = train_stage(nip, f.ds.corpus, f.ds.users, tc, Stage::kPretrain, nullptr);

  tc.ablation = Ablation::kMip;
  Model mip(config_for(f.ds.corpus, 1));
  const StageResult b = train_stage(mip, f.ds.corpus, f.ds.users, tc, Stage::kPretrain, nullptr);
  for (std::size_t s = 0; s < a.curve.size(); ++s) CHECK(a.curve[s].loss == b.curve[s].loss);
  for (std::size_t i = 0; i < nip.parameters().size(); ++i) CHECK(nip.parameters()[i]->value == mip.parameters()[i]->value);
}

TEST_CASE("delta_tau = 0 with one item per request: TAMIP loss equals MIP") {
  SynthConfig sc = small_synth(30);
  sc.items_per_request = 1;
  sc.requests_per_user = 30;
  const Dataset ds = generate_dataset(sc);
  const auto ex = build_pretrain_examples(ds.users, SplitConfig{}, 2, 1);
  PretrainBatch batch;
  for (std::size_t i = 0; i < 32; ++i) {
    const PretrainExample& e = ex[i * 31 % ex.size()];
    const auto& ev = ds.users[e.user].events;
    // Window [tau, tau] only catches an earlier event logged in the same second.
    bool distinct = true;
    for (std::size_t j = 0; j < e.cut; ++j) distinct &= ev[j].ts != ev[e.cut].ts;
    if (!distinct) continue;
    batch.logs.push_back(&ds.users[e.user]);
    batch.cuts.push_back(e.cut);
  }
  REQUIRE(batch.logs.size() >= 24);
  const Model m(config_for(ds.corpus));
  Tape t1, t2;
  CHECK(pretrain_loss(t1, m, ds.corpus, batch, true, 0).total.value() ==
        pretrain_loss(t2, m, ds.corpus, batch, false, 0).total.value());
}

TEST_CASE("SFT branch masks truncate the window") {
  const Fixture f;
  const UserLog& log = f.ds.users[0];
  const auto ctx = context_window(log, 6, 50);
  REQUIRE(ctx.size() == 6);
  const int c = category_of(f.ds.corpus.at(ctx[5].item_id), ConditionFamily::kGenre);
  const AttentionMask k1 = sft_branch_mask(f.ds.corpus, ctx, ConditionFamily::kGenre, c, 1);
  const AttentionMask k2 = sft_branch_mask(f.ds.corpus, ctx, ConditionFamily::kGenre, c, 2);
  CHECK(last_open_position(k1) == 5);
  CHECK(k2.blocked(5, 5));
  CHECK(k1.has_source(MaskSource::kCausal));
  CHECK(k1.has_source(MaskSource::kSparse));
  for (Index j = 0; j < 6; ++j)
    CHECK(k1.blocked(5, j) ==
          (category_of(f.ds.corpus.at(ctx[static_cast<std::size_t>(j)].item_id), ConditionFamily::kGenre) != c));
  const AttentionMask k9 = sft_branch_mask(f.ds.corpus, ctx, ConditionFamily::kGenre, c, 9);
  CHECK_FALSE(last_open_position(k9).has_value());
}

TEST_CASE("backbone mask") {
  const Fixture f;
  const auto ctx = context_window(f.ds.users[1], 10, 50);
  CHECK(backbone_mask(ctx, std::nullopt, 900) == build_causal_mask(10));
  const AttentionMask t = backbone_mask(ctx, ctx[9].ts, 900);
  CHECK(t.has_source(MaskSource::kTemporal));
  CHECK(t.blocked(9, 9));  // same request as the anchor
  CHECK(context_window(f.ds.users[1], 50, 40).size() == 40);
  CHECK(context_window(f.ds.users[1], 50, 40).front().item_id == f.ds.users[1].events[10].item_id);
  CHECK_THROWS_AS(context_window(f.ds.users[1], 51, 40), DataError);
}

TEST_CASE("condition table rows") {
  ModelConfig c;
  CHECK(condition_index(c, ConditionFamily::kGenre, 3) == 3);
  CHECK(condition_index(c, ConditionFamily::kLanguage, 1) == c.num_genres + 1);
  CHECK(condition_index(c, ConditionFamily::kRelease, 1) == c.num_genres + c.num_languages + 1);
  CHECK_THROWS_AS(condition_index(c, ConditionFamily::kGenre, c.num_genres), DataError);
}

TEST_CASE("training is deterministic") {
  const Fixture f;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.pretrain_steps = 4;
  auto run = [&] {
    Model m(config_for(f.ds.corpus));
    std::ostringstream csv;
    train_stage(m, f.ds.corpus, f.ds.users, tc, Stage::kPretrain, &csv);
    return std::make_pair(csv.str(), m.param("branch.1.ffn.w2").value);
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first.rfind("step,loss,head_1,head_2\n", 0) == 0);
}

TEST_CASE("lr_sft = 0 leaves every parameter unchanged; freeze keeps the backbone") {
  const Fixture f;
  const Model init(config_for(f.ds.corpus));
  TrainConfig tc;
  tc.batch_size = 16;
  tc.sft_steps = 3;
  tc.lr_sft = 0.0;
  Model m = init;
  train_stage(m, f.ds.corpus, f.ds.users, tc, Stage::kSft, nullptr);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) CHECK(m.parameters()[i]->value == init.parameters()[i]->value);

  tc.lr_pretrain = 1e-2;
  tc.lr_sft = 1e-3;
  tc.freeze_backbone = true;
  Model frozen = init;
  train_stage(frozen, f.ds.corpus, f.ds.users, tc, Stage::kSft, nullptr);
  for (std::size_t i = 0; i < frozen.parameters().size(); ++i) {
    const std::string& name = frozen.parameters()[i]->name;
    const bool moves = name.rfind("branch.", 0) == 0 || name == "cond_emb";
    if (!moves) CHECK(frozen.parameters()[i]->value == init.parameters()[i]->value);
  }
  CHECK(frozen.param("cond_emb").value != init.param("cond_emb").value);
  CHECK(frozen.param("branch.0.attn.wq").value != init.param("branch.0.attn.wq").value);
}

TEST_CASE("non-finite loss aborts with the step") {
  const Fixture f;
  Model m(config_for(f.ds.corpus));
  m.param("emb.proj.b").value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.batch_size = 8;
  Trainer t(m, f.ds.corpus, f.ds.users, tc, Stage::kPretrain);
  try {
    t.step();
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("train config keys round trip and validate") {
  TrainConfig tc;
  tc.ablation = Ablation::kMip;
  tc.lr_sft = 3e-5;
  tc.split.test_requests = 3;
  const TrainConfig back = TrainConfig::from_key_values(tc.to_key_values());
  CHECK(back.to_key_values() == tc.to_key_values());
  CHECK(back.ablation == Ablation::kMip);
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  CHECK_THROWS_AS(parse_ablation("mtp"), ConfigError);
  CHECK(to_string(parse_ablation("tamip")) == "tamip");
}

TEST_CASE("smoke: pre-training loss falls on 1k synthetic users") {
  // Bound frozen from a pilot run of this exact configuration (ratio 0.878).
  SynthConfig sc;
  sc.num_users = 1000;
  const Dataset ds = generate_dataset(sc);
  TrainConfig tc;
  tc.batch_size = 64;
  tc.pretrain_steps = 500;
  Model m(model_config_for(ModelConfig{}, tc.ablation));
  const StageResult r = train_stage(m, ds.corpus, ds.users, tc, Stage::kPretrain, nullptr);
  double tail = 0;
  for (std::size_t s = 450; s < 500; ++s) tail += r.curve[s].loss / 50.0;
  MESSAGE("step 1 " << r.curve[0].loss << ", mean of last 50 " << tail);
  CHECK(tail < 0.92 * r.curve[0].loss);
}
