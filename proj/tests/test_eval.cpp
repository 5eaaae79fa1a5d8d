// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "climber/data/synth.hpp"
#include "climber/eval/evaluate.hpp"
#include "climber/eval/retrieval.hpp"
#include "climber/train/trainer.hpp"
#include "support.hpp"

using namespace climber;
using climber::testing::random_tensor;
using climber::testing::small_synth;

namespace {

ModelConfig config_for(const Corpus& corpus) {
  ModelConfig c;
  c.num_genres = corpus.num_genres();
  c.num_languages = corpus.num_languages();
  c.hash_buckets = 512;
  return c;
}

// Exhaustive scan: sort every (score, id) pair.
std::vector<std::int64_t> scan_top_k(const Tensor& emb, const std::vector<std::int64_t>& ids, const RowVector& q,
                                     std::size_t k) {
  std::vector<std::pair<double, std::int64_t>> all;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double s = 0;
    for (Index c = 0; c < emb.cols(); ++c) s += emb(static_cast<Index>(i), c) * q(c);
    all.emplace_back(s, ids[i]);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

RetrievalIndex random_index(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), 100);
  std::shuffle(ids.begin(), ids.end(), rng);
  return RetrievalIndex(ids, random_tensor(static_cast<Index>(n), 8, rng), "test");
}

}  // namespace

TEST_CASE("top_k matches an exhaustive scan") {
  std::mt19937_64 rng(1);
  const RetrievalIndex idx = random_index(300, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const RowVector q = random_tensor(1, 8, rng).row(0);
    const std::size_t k = 1 + rng() % 300;
    const std::vector<std::int64_t> got = top_k(idx, q, static_cast<Index>(k));
    const auto want = scan_top_k(idx.embeddings(), idx.ids(), q, k);
    CHECK(got == want);
  }
  CHECK(top_k(idx, RowVector::Zero(8), 0).empty());
  CHECK_THROWS_AS(top_k(idx, RowVector::Zero(8), 301), ConfigError);
}

TEST_CASE("top_k ties break by ascending id and are repeatable") {
  const std::vector<std::int64_t> ids = {9, 3, 7, 1};
  Tensor e(4, 2);
  e << 1, 0, 1, 0, 0, 1, 2, 0;
  const RetrievalIndex idx(ids, e, "test");
  RowVector q(2);
  q << 1, 0;
  CHECK(top_k(idx, q, 4) == std::vector<std::int64_t>{1, 3, 9, 7});
  CHECK(top_k(idx, q, 4) == top_k(idx, q, 4));
  CHECK(rank_of(idx, q, 9) == 3);
  CHECK(rank_of(idx, q, 7) == 4);
}

TEST_CASE("K = |corpus| gives a permutation; unit rows retrieve themselves") {
  std::mt19937_64 rng(2);
  RetrievalIndex raw = random_index(50, rng);
  Tensor unit = raw.embeddings();
  unit.rowwise().normalize();
  const RetrievalIndex idx(raw.ids(), unit, "test");
  auto all = top_k(idx, unit.row(0), 50);
  std::sort(all.begin(), all.end());
  auto ids = idx.ids();
  std::sort(ids.begin(), ids.end());
  CHECK(all == ids);
  for (Index j = 0; j < 50; ++j) CHECK(top_k(idx, unit.row(j), 1).front() == idx.ids()[static_cast<std::size_t>(j)]);
}

TEST_CASE("index rows equal independently recomputed item embeddings") {
  const Dataset ds = generate_dataset(small_synth(5));
  const Model m(config_for(ds.corpus));
  const RetrievalIndex idx = build_index(m, ds.corpus);
  REQUIRE(idx.size() == static_cast<Index>(ds.corpus.size()));
  CHECK(idx.source() == model_fingerprint(m));
  const Tensor& id_table = m.param("emb.id").value;
  const Tensor& w = m.param("emb.proj.w").value;
  const Tensor& b = m.param("emb.proj.b").value;
  for (Index r = 0; r < idx.size(); r += 7) {
    const Item& it = ds.corpus.at(idx.ids()[static_cast<std::size_t>(r)]);
    // concat(id, genre, language, release) then the fusion projection, by hand.
    std::vector<double> x;
    for (Index c = 0; c < id_table.cols(); ++c) x.push_back(id_table(hash_bucket(it.item_id, 512), c));
    for (Index c = 0; c < 4; ++c) x.push_back(m.param("emb.genre").value(it.genre, c));
    for (Index c = 0; c < 4; ++c) x.push_back(m.param("emb.language").value(it.language, c));
    for (Index c = 0; c < 4; ++c) x.push_back(m.param("emb.release").value(static_cast<Index>(it.release), c));
    for (Index c = 0; c < w.cols(); ++c) {
      double s = b(0, c);
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w(static_cast<Index>(i), c);
      CHECK(std::abs(idx.embeddings()(r, c) - s) < 1e-12);
    }
  }
  CHECK(build_index(m, ds.corpus).embeddings() == idx.embeddings());
  CHECK_THROWS_AS(build_index(m, Corpus{}), DataError);
  Model other(config_for(ds.corpus));
  other.param("emb.proj.b").value(0, 0) += 1e-9;
  CHECK(model_fingerprint(other) != model_fingerprint(m));
}

TEST_CASE("score is the inner product") {
  std::mt19937_64 rng(3);
  const RetrievalIndex idx = random_index(20, rng);
  const RowVector q = random_tensor(1, 8, rng).row(0);
  const RowVector s = idx.scores(q);
  for (Index i = 0; i < 20; ++i) {
    double dot = 0;
    for (Index c = 0; c < 8; ++c) dot += idx.embeddings()(i, c) * q(c);
    CHECK(std::abs(s(i) - dot) < 1e-12);
  }
  const RowVector a = idx.embeddings().row(4);
  CHECK(idx.scores(a)(4) == doctest::Approx(a.squaredNorm()).epsilon(1e-14));
  CHECK(idx.scores(RowVector::Zero(8)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hit rate from ranks") {
  const std::vector<Index> ranks = {1, 5, 11, 50, 51};
  CHECK(hr_at_k(ranks, 10) == doctest::Approx(0.4));
  CHECK(hr_at_k(ranks, 50) == doctest::Approx(0.8));
  CHECK(hr_at_k(std::vector<Index>{51}, 50) == 0.0);
  CHECK(hr_at_k(std::vector<Index>{50}, 50) == 1.0);
}

TEST_CASE("condition compliance counts matches") {
  std::vector<Item> items;
  for (int i = 0; i < 10; ++i) items.push_back({i, i < 7 ? 2 : 1, 0, ReleaseBucket::kNew});
  const Corpus corpus(items, 3, 1);
  std::vector<std::int64_t> ids(10);
  std::iota(ids.begin(), ids.end(), 0);
  CHECK(cc_at_k(ids, 2, corpus, ConditionFamily::kGenre) == doctest::Approx(0.7));
  CHECK(cc_at_k(std::span(ids).first(7), 2, corpus, ConditionFamily::kGenre) == 1.0);
  CHECK(cc_at_k(std::span(ids).first(7), 0, corpus, ConditionFamily::kGenre) == 0.0);
  CHECK(cc_at_k(ids, 0, corpus, ConditionFamily::kRelease) == 1.0);
  CHECK_THROWS_AS(cc_at_k(std::vector<std::int64_t>{}, 0, corpus, ConditionFamily::kGenre), DataError);
}

TEST_CASE("hr_at_k over an eval set equals a hand-scored oracle") {
  const Dataset ds = generate_dataset(small_synth(50));
  const Model m(config_for(ds.corpus));
  const RetrievalIndex idx = build_index(m, ds.corpus);
  const EvalSet set = build_eval_set(ds.corpus, ds.users, SplitConfig{}, ConditionFamily::kGenre);
  CHECK(set.examples.size() == 50);
  for (bool conditioned : {false, true}) {
    std::vector<Index> ranks;
    for (const EvalExample& e : set.examples) {
      // One query per example, encoded alone, masks built from primitives.
      const UserLog& log = ds.users[e.user];
      std::vector<Item> items;
      std::vector<int> cats;
      for (std::size_t i = e.cut - std::min<std::size_t>(e.cut, 50); i < e.cut; ++i) {
        items.push_back(ds.corpus.at(log.events[i].item_id));
        cats.push_back(items.back().genre);
      }
      const Index n = static_cast<Index>(items.size());
      Tape tape(false);
      const SequenceInput in{items, build_causal_mask(n)};
      const BackboneState s = m.encode(tape, std::span(&in, 1));
      BranchQuery q{0, build_causal_mask(n), std::nullopt};
      if (conditioned) q = {0, combine({build_causal_mask(n), build_condition_mask(cats, e.condition)}), e.condition};
      const RowVector h = m.branch_forward(tape, s, 0, std::span(&q, 1)).value().row(0);
      const RowVector scores = idx.embeddings() * h.transpose();
      double target = 0;
      for (Index i = 0; i < idx.size(); ++i)
        if (idx.ids()[static_cast<std::size_t>(i)] == e.target) target = scores(i);
      Index rank = 1;
      for (Index i = 0; i < idx.size(); ++i) {
        const auto id = idx.ids()[static_cast<std::size_t>(i)];
        if (scores(i) > target || (scores(i) == target && id < e.target)) ++rank;
      }
      ranks.push_back(rank);
    }
    for (Index k : {1, 10, 50, 150}) {
      Index hits = 0;
      for (Index r : ranks) hits += r <= k ? 1 : 0;
      const double got = hr_at_k(idx, m, ds.corpus, ds.users, set.examples, k, QueryOptions{}, conditioned);
      CHECK(got == doctest::Approx(static_cast<double>(hits) / 50.0));
    }
    CHECK(hr_at_k(idx, m, ds.corpus, ds.users, set.examples, idx.size(), QueryOptions{}, conditioned) == 1.0);
  }
}

TEST_CASE("query batch size does not change the ranking") {
  const Dataset ds = generate_dataset(small_synth(30));
  const Model m(config_for(ds.corpus));
  const EvalSet set = build_eval_set(ds.corpus, ds.users, SplitConfig{}, ConditionFamily::kGenre);
  std::vector<QueryRequest> reqs;
  for (const EvalExample& e : set.examples) reqs.push_back({&ds.users[e.user], e.cut, e.condition, std::nullopt});
  QueryOptions one;
  one.batch_size = 1;
  const Tensor a = query_vectors(m, ds.corpus, reqs, one);
  const Tensor b = query_vectors(m, ds.corpus, reqs, QueryOptions{});
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("horizon curve") {
  const Dataset ds = generate_dataset(small_synth(40));
  const Model m(config_for(ds.corpus));
  const RetrievalIndex idx = build_index(m, ds.corpus);

  // Default logs: the cut lands on the first held-out request.
  for (const UserLog& log : ds.users)
    CHECK(horizon_cut(log, 10) == split_user_log(log, SplitConfig{}).test_start);

  const HorizonCurve one = horizon_eval(idx, m, ds.corpus, ds.users, 1, 50, QueryOptions{});
  std::vector<EvalExample> ex;
  for (std::size_t u = 0; u < ds.users.size(); ++u) {
    const std::size_t cut = *horizon_cut(ds.users[u], 1);
    ex.push_back({u, cut, ds.users[u].events[cut].item_id, 0});
  }
  CHECK(one.hr.size() == 1);
  CHECK(one.hr[0] == hr_at_k(idx, m, ds.corpus, ds.users, ex, 50, QueryOptions{}, false));

  std::vector<UserLog> users = ds.users;
  users[0].events.resize(3);
  const HorizonCurve ten = horizon_eval(idx, m, ds.corpus, users, 10, 50, QueryOptions{});
  CHECK(ten.skipped == 1);
  CHECK(ten.users == 39);
  for (double v : ten.hr) CHECK((v >= 0.0 && v <= 1.0));
  std::ostringstream csv;
  write_horizon_csv(csv, ten);
  const std::string text = csv.str();
  CHECK(text.rfind("offset,hr,n\n1,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 11);
}

TEST_CASE("constant-preference users give a near-flat horizon curve") {
  SynthConfig sc = small_synth(1500);
  sc.burst_strength = 0.0;
  sc.drift_rate = 0.0;
  const Dataset ds = generate_dataset(sc);
  const Model m(config_for(ds.corpus));
  const HorizonCurve c = horizon_eval(build_index(m, ds.corpus), m, ds.corpus, ds.users, 10, 50, QueryOptions{});
  const auto [lo, hi] = std::minmax_element(c.hr.begin(), c.hr.end());
  MESSAGE("horizon HR@50 range " << *lo << " .. " << *hi);
  // Offsets are exchangeable here; 0.06 is about five binomial standard errors.
  CHECK(*hi - *lo < 0.06);
}

TEST_CASE("evaluate reports") {
  const Dataset ds = generate_dataset(small_synth(30));
  const Model m(config_for(ds.corpus));
  const RetrievalIndex idx = build_index(m, ds.corpus);
  EvalOptions o;
  const EvalReport g = evaluate(idx, m, ds.corpus, ds.users, o);
  CHECK(g.hr.size() == 3);
  CHECK(g.cc.empty());
  CHECK(g.hr.at(10) <= g.hr.at(20));
  CHECK(g.hr.at(20) <= g.hr.at(50));
  std::ostringstream csv;
  write_report_csv(csv, g);
  CHECK(csv.str().rfind("metric,k,value\nhr,10,", 0) == 0);

  o.mode = EvalMode::kConditioned;
  const EvalReport c = evaluate(idx, m, ds.corpus, ds.users, o);
  CHECK(c.cc.size() == 3);
  for (const auto& [k, v] : c.cc) CHECK((v >= 0.0 && v <= 1.0));
  const auto j = nlohmann::json::parse(report_json(c));
  CHECK(j.at("mode") == "conditioned");
  CHECK(j.at("examples") == 30);
  CHECK(j.at("index_source") == model_fingerprint(m));
  CHECK(j.contains("cc@50"));
  CHECK(j.at("hr@50").get<double>() == c.hr.at(50));

  o.mode = EvalMode::kHorizon;
  const auto h = nlohmann::json::parse(report_json(evaluate(idx, m, ds.corpus, ds.users, o)));
  CHECK(h.at("horizon_hr").size() == 10);
  CHECK(parse_eval_mode("horizon") == EvalMode::kHorizon);
  CHECK_THROWS_AS(parse_eval_mode("offline"), ConfigError);
}
