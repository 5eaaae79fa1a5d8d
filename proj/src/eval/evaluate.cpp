// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/eval/evaluate.hpp"

#include <algorithm>
#include <ostream>

#include <json.hpp>

#include "climber/core/key_values.hpp"
#include "climber/train/trainer.hpp"

namespace climber {

BranchQuery first_branch_query(const Model& model, const Corpus& corpus,
                               std::span<const InteractionEvent> context, const AttentionMask& backbone,
                               std::optional<int> condition, ConditionFamily family, std::size_t seq) {
  BranchQuery q;
  q.seq = seq;
  if (!condition) {
    q.mask = backbone;
    return q;
  }
  const int row = condition_index(model.config(), family, *condition);
  q.mask = sft_branch_mask(corpus, context, family, *condition, 1);
  if (model.config().condition_embedding) q.condition = row;
  return q;
}

Tensor query_vectors(const Model& model, const Corpus& corpus, std::span<const QueryRequest> requests,
                     const QueryOptions& options) {
  const ModelConfig& mc = model.config();
  Tensor out(static_cast<Index>(requests.size()), mc.d);
  const std::size_t batch = std::max<std::size_t>(options.batch_size, 1);
  for (std::size_t start = 0; start < requests.size(); start += batch) {
    const std::size_t stop = std::min(requests.size(), start + batch);
    std::vector<SequenceInput> seqs;
    std::vector<std::span<const InteractionEvent>> contexts;
    for (std::size_t r = start; r < stop; ++r) {
      const QueryRequest& req = requests[r];
      if (!req.log || req.cut == 0) throw DataError("query_vectors: request without history");
      const auto ctx = context_window(*req.log, req.cut, mc.max_seq_len);
      std::optional<std::int64_t> tau;
      if (options.temporal) {
        if (req.tau) {
          tau = req.tau;
        } else if (req.cut < req.log->events.size()) {
          tau = req.log->events[req.cut].ts;
        } else {
          throw DataError("query_vectors: temporal masking needs an anchor timestamp");
        }
      }
      seqs.push_back({items_of(corpus, ctx), backbone_mask(ctx, tau, options.delta_tau)});
      contexts.push_back(ctx);
    }
    Tape tape(false);
    const BackboneState state = model.encode(tape, seqs);
    std::vector<BranchQuery> queries;
    for (std::size_t b = 0; b < seqs.size(); ++b)
      queries.push_back(first_branch_query(model, corpus, contexts[b], seqs[b].mask,
                                           requests[start + b].condition, options.family, b));
    const Var h = model.branch_forward(tape, state, 0, queries);
    out.middleRows(static_cast<Index>(start), h.rows()) = h.value();
  }
  return out;
}

double hr_at_k(std::span<const Index> ranks, Index k) {
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](Index r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double cc_at_k(std::span<const std::int64_t> retrieved, int condition, const Corpus& corpus,
               ConditionFamily family) {
  if (retrieved.empty()) throw DataError("cc_at_k: empty retrieved list");
  std::size_t match = 0;
  for (std::int64_t id : retrieved)
    if (category_of(corpus.at(id), family) == condition) ++match;
  return static_cast<double>(match) / static_cast<double>(retrieved.size());
}

std::vector<Index> target_ranks(const RetrievalIndex& index, const Tensor& queries,
                                std::span<const std::int64_t> targets) {
  if (static_cast<std::size_t>(queries.rows()) != targets.size())
    throw DataError("target_ranks: query/target count mismatch");
  std::vector<Index> out;
  out.reserve(targets.size());
  for (Index i = 0; i < queries.rows(); ++i)
    out.push_back(rank_of(index, queries.row(i), targets[static_cast<std::size_t>(i)]));
  return out;
}

EvalSet build_eval_set(const Corpus& corpus, const std::vector<UserLog>& users, const SplitConfig& split,
                       ConditionFamily family) {
  EvalSet set;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const UserSplit s = split_user_log(users[u], split);
    if (s.test_start == 0 || s.test_start >= users[u].events.size()) {
      ++set.skipped;
      continue;
    }
    const std::int64_t target = users[u].events[s.test_start].item_id;
    set.examples.push_back({u, s.test_start, target, category_of(corpus.at(target), family)});
  }
  return set;
}

namespace {

std::vector<QueryRequest> requests_for(const std::vector<UserLog>& users,
                                       std::span<const EvalExample> examples, bool conditioned) {
  std::vector<QueryRequest> reqs;
  reqs.reserve(examples.size());
  for (const EvalExample& e : examples) {
    QueryRequest r;
    r.log = &users[e.user];
    r.cut = e.cut;
    if (conditioned) r.condition = e.condition;
    reqs.push_back(r);
  }
  return reqs;
}

}  // namespace

double hr_at_k(const RetrievalIndex& index, const Model& model, const Corpus& corpus,
               const std::vector<UserLog>& users, std::span<const EvalExample> examples, Index k,
               const QueryOptions& options, bool conditioned) {
  const auto reqs = requests_for(users, examples, conditioned);
  const Tensor q = query_vectors(model, corpus, reqs, options);
  std::vector<std::int64_t> targets;
  for (const EvalExample& e : examples) targets.push_back(e.target);
  const auto ranks = target_ranks(index, q, targets);
  return hr_at_k(ranks, k);
}

std::optional<std::size_t> horizon_cut(const UserLog& log, int horizon) {
  const auto starts = request_starts(log.events);
  const auto h = static_cast<std::size_t>(std::max(horizon, 1));
  for (auto it = starts.rbegin(); it != starts.rend(); ++it)
    if (*it >= 1 && *it + h <= log.events.size()) return *it;
  return std::nullopt;
}

HorizonCurve horizon_eval(const RetrievalIndex& index, const Model& model, const Corpus& corpus,
                          const std::vector<UserLog>& users, int horizon, Index k,
                          const QueryOptions& options) {
  if (horizon < 1) throw ConfigError("horizon_eval: horizon must be >= 1");
  HorizonCurve curve;
  curve.k = k;
  std::vector<QueryRequest> reqs;
  for (const UserLog& log : users) {
    const auto cut = horizon_cut(log, horizon);
    if (!cut) {
      ++curve.skipped;
      continue;
    }
    QueryRequest r;
    r.log = &log;
    r.cut = *cut;
    reqs.push_back(r);
  }
  curve.users = reqs.size();
  curve.hr.assign(static_cast<std::size_t>(horizon), 0.0);
  if (reqs.empty()) return curve;
  const Tensor q = query_vectors(model, corpus, reqs, options);
  std::vector<std::size_t> hits(static_cast<std::size_t>(horizon), 0);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const RowVector s = index.scores(q.row(static_cast<Index>(i)));
    for (int o = 1; o <= horizon; ++o) {
      const std::int64_t target = reqs[i].log->events[reqs[i].cut + static_cast<std::size_t>(o - 1)].item_id;
      if (rank_from_scores(index, s, target) <= k) ++hits[static_cast<std::size_t>(o - 1)];
    }
  }
  for (std::size_t o = 0; o < hits.size(); ++o)
    curve.hr[o] = static_cast<double>(hits[o]) / static_cast<double>(reqs.size());
  return curve;
}

void write_horizon_csv(std::ostream& os, const HorizonCurve& curve) {
  os << "offset,hr,n\n";
  for (std::size_t o = 0; o < curve.hr.size(); ++o)
    os << (o + 1) << ',' << format_double(curve.hr[o]) << ',' << curve.users << '\n';
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "general") return EvalMode::kGeneral;
  if (name == "conditioned") return EvalMode::kConditioned;
  if (name == "horizon") return EvalMode::kHorizon;
  throw ConfigError("unknown eval mode '" + name + "' (expected general, conditioned or horizon)");
}

std::string to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::kGeneral: return "general";
    case EvalMode::kConditioned: return "conditioned";
    case EvalMode::kHorizon: return "horizon";
  }
  return "general";
}

EvalReport evaluate(const RetrievalIndex& index, const Model& model, const Corpus& corpus,
                    const std::vector<UserLog>& users, const EvalOptions& options) {
  EvalReport report;
  report.mode = options.mode;
  report.index_source = index.source();
  if (options.mode == EvalMode::kHorizon) {
    report.horizon = horizon_eval(index, model, corpus, users, options.horizon, options.horizon_k, options.query);
    report.examples = report.horizon->users;
    report.skipped = report.horizon->skipped;
    return report;
  }
  const bool conditioned = options.mode == EvalMode::kConditioned;
  const EvalSet set = build_eval_set(corpus, users, options.split, options.query.family);
  report.examples = set.examples.size();
  report.skipped = set.skipped;
  if (set.examples.empty()) throw DataError("evaluate: no evaluation examples");
  const auto reqs = requests_for(users, set.examples, conditioned && options.condition_queries);
  const Tensor q = query_vectors(model, corpus, reqs, options.query);
  std::vector<std::int64_t> targets;
  for (const EvalExample& e : set.examples) targets.push_back(e.target);
  const auto ranks = target_ranks(index, q, targets);
  for (Index k : options.ks) report.hr[k] = hr_at_k(ranks, k);
  if (conditioned) {
    const Index kmax = *std::max_element(options.ks.begin(), options.ks.end());
    std::map<Index, double> sums;
    for (std::size_t i = 0; i < set.examples.size(); ++i) {
      const auto list = top_k(index, q.row(static_cast<Index>(i)), kmax);
      for (Index k : options.ks)
        sums[k] += cc_at_k(std::span(list).first(static_cast<std::size_t>(k)), set.examples[i].condition,
                           corpus, options.query.family);
    }
    for (Index k : options.ks) report.cc[k] = sums[k] / static_cast<double>(set.examples.size());
  }
  return report;
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "metric,k,value\n";
  for (const auto& [k, v] : report.hr) os << "hr," << k << ',' << format_double(v) << '\n';
  for (const auto& [k, v] : report.cc) os << "cc," << k << ',' << format_double(v) << '\n';
  if (report.horizon)
    for (std::size_t o = 0; o < report.horizon->hr.size(); ++o)
      os << "horizon_hr_offset_" << (o + 1) << ',' << report.horizon->k << ','
         << format_double(report.horizon->hr[o]) << '\n';
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(report.mode);
  j["examples"] = report.examples;
  j["skipped"] = report.skipped;
  j["index_source"] = report.index_source;
  for (const auto& [k, v] : report.hr) j["hr@" + std::to_string(k)] = v;
  for (const auto& [k, v] : report.cc) j["cc@" + std::to_string(k)] = v;
  if (report.horizon) {
    j["horizon_k"] = report.horizon->k;
    j["horizon_hr"] = report.horizon->hr;
  }
  return j.dump();
}

}  // namespace climber
