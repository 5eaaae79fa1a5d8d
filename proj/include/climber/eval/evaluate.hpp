// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "climber/data/splits.hpp"
#include "climber/eval/retrieval.hpp"
#include "climber/model/model.hpp"

namespace climber {

// ---------------------------------------------------------------------------
// Query vectors

struct QueryRequest {
  const UserLog* log = nullptr;
  std::size_t cut = 0;             // history is events[0, cut)
  std::optional<int> condition;    // category under QueryOptions::family
  std::optional<std::int64_t> tau; // temporal anchor; defaults to events[cut].ts
};

struct QueryOptions {
  ConditionFamily family = ConditionFamily::kGenre;
  bool temporal = false;
  std::int64_t delta_tau = 900;
  std::size_t batch_size = 256;
};

// Branch query for the first branch: the backbone mask when unconditioned,
// causal + condition-sparse otherwise. Throws DataError for a condition
// outside the model's vocabulary.
BranchQuery first_branch_query(const Model& model, const Corpus& corpus,
                               std::span<const InteractionEvent> context, const AttentionMask& backbone,
                               std::optional<int> condition, ConditionFamily family, std::size_t seq);

// One row per request: the first branch's output.
Tensor query_vectors(const Model& model, const Corpus& corpus, std::span<const QueryRequest> requests,
                     const QueryOptions& options);

// ---------------------------------------------------------------------------
// Metrics

double hr_at_k(std::span<const Index> ranks, Index k);

// Mean of [C(j) == c] over the retrieved list.
double cc_at_k(std::span<const std::int64_t> retrieved, int condition, const Corpus& corpus,
               ConditionFamily family);

// Ranks of targets[i] for query row i.
std::vector<Index> target_ranks(const RetrievalIndex& index, const Tensor& queries,
                                std::span<const std::int64_t> targets);

// ---------------------------------------------------------------------------
// Protocols

struct EvalExample {
  std::size_t user = 0;
  std::size_t cut = 0;  // first event of the held-out requests
  std::int64_t target = 0;
  int condition = 0;    // category of the target
};

struct EvalSet {
  std::vector<EvalExample> examples;
  std::size_t skipped = 0;
};

EvalSet build_eval_set(const Corpus& corpus, const std::vector<UserLog>& users, const SplitConfig& split,
                       ConditionFamily family);

// HR@k over an eval set, querying with each example's condition when
// `conditioned` is set.
double hr_at_k(const RetrievalIndex& index, const Model& model, const Corpus& corpus,
               const std::vector<UserLog>& users, std::span<const EvalExample> examples, Index k,
               const QueryOptions& options, bool conditioned);

struct HorizonCurve {
  Index k = 50;
  std::vector<double> hr;  // hr[o-1] for offset o
  std::size_t users = 0;
  std::size_t skipped = 0;
};

// Latest request start s >= 1 with s + horizon <= size; empty if none.
std::optional<std::size_t> horizon_cut(const UserLog& log, int horizon);

HorizonCurve horizon_eval(const RetrievalIndex& index, const Model& model, const Corpus& corpus,
                          const std::vector<UserLog>& users, int horizon, Index k,
                          const QueryOptions& options);

void write_horizon_csv(std::ostream& os, const HorizonCurve& curve);

// ---------------------------------------------------------------------------
// Reports

enum class EvalMode { kGeneral, kConditioned, kHorizon };

EvalMode parse_eval_mode(const std::string& name);
std::string to_string(EvalMode mode);

struct EvalOptions {
  EvalMode mode = EvalMode::kGeneral;
  QueryOptions query;
  SplitConfig split;
  std::vector<Index> ks = {10, 20, 50};
  // Conditioned mode only: query with the condition (false scores the plain
  // query against the same conditions).
  bool condition_queries = true;
  int horizon = 10;
  Index horizon_k = 50;
};

struct EvalReport {
  EvalMode mode = EvalMode::kGeneral;
  std::map<Index, double> hr;
  std::map<Index, double> cc;
  std::optional<HorizonCurve> horizon;
  std::size_t examples = 0;
  std::size_t skipped = 0;
  std::string index_source;
};

EvalReport evaluate(const RetrievalIndex& index, const Model& model, const Corpus& corpus,
                    const std::vector<UserLog>& users, const EvalOptions& options);

// metric,k,value rows
void write_report_csv(std::ostream& os, const EvalReport& report);
std::string report_json(const EvalReport& report);

}  // namespace climber
