// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "climber/core/key_values.hpp"
#include "climber/eval/retrieval.hpp"
#include "climber/model/model.hpp"

namespace climber {

struct ServingConfig {
  int top_p = 4;
  int window = 200;  // events counted by precompute_instructions
  ConditionFamily family = ConditionFamily::kGenre;
  bool temporal = false;  // mask [now - delta_tau, now] in the backbone
  std::int64_t delta_tau = 900;
  Index k = 50;

  void validate() const;
  KeyValues to_key_values() const;  // serve.* keys
  static ServingConfig from_key_values(const KeyValues& kv);
};

struct InstructionCache {
  std::vector<int> conditions;  // c_1..c_P
  std::int64_t computed_at = 0;
  int window = 0;
};

// Categories by descending count, ties by ascending id.
std::vector<int> rank_categories(const Corpus& corpus, std::span<const InteractionEvent> events,
                                 ConditionFamily family);

// Whole-population engagement ranking, for padding short caches.
std::vector<int> global_popularity(const Corpus& corpus, const std::vector<UserLog>& users,
                                   ConditionFamily family);

// Top-P categories of the last `window` events, padded from `fallback`.
// computed_at is the newest counted timestamp, or `now` when given.
InstructionCache precompute_instructions(const Corpus& corpus, std::span<const InteractionEvent> events,
                                         ConditionFamily family, int window, int top_p,
                                         std::span<const int> fallback,
                                         std::optional<std::int64_t> now = std::nullopt);

struct ConditionOutput {
  int condition = 0;
  std::optional<RowVector> query;
  std::string error;  // set when query is empty
};

struct BatchedInference {
  std::vector<ConditionOutput> outputs;  // input order
  double backbone_us = 0.0;
  double branches_us = 0.0;
};

// One backbone pass over the last max_seq_len events, then one first-branch
// pass per condition over the cached hidden states.
BatchedInference batched_infer(const Model& model, const Corpus& corpus,
                               std::span<const InteractionEvent> events, std::span<const int> conditions,
                               const ServingConfig& config, std::optional<std::int64_t> now = std::nullopt);

struct ServeRequest {
  std::int64_t user_id = 0;
  std::vector<InteractionEvent> events;  // oldest first
  std::optional<Index> k;
  std::optional<std::int64_t> now;
};

struct ConditionResult {
  int condition = 0;
  std::vector<std::int64_t> items;
  std::string error;
};

struct StageTimings {
  double backbone_us = 0.0;
  double branches_us = 0.0;
  double search_us = 0.0;
  double total_us = 0.0;
};

struct ServeResponse {
  std::int64_t user_id = 0;
  std::vector<ConditionResult> results;
  StageTimings timings;
  std::int64_t cache_computed_at = 0;
  bool cache_miss = false;
};

// Frozen model and index; safe to call serve() from several threads.
class Server {
 public:
  Server(const Model& model, const Corpus& corpus, const RetrievalIndex& index, ServingConfig config,
         std::vector<int> fallback);

  // Only between serving sessions.
  void set_cache(std::int64_t user_id, InstructionCache cache);
  void precompute(const std::vector<UserLog>& users);
  const InstructionCache* cache(std::int64_t user_id) const;

  ServeResponse serve(const ServeRequest& request) const;
  ServeResponse serve_with(const ServeRequest& request, std::span<const int> conditions) const;

  std::size_t cache_misses() const { return misses_.load(); }
  const ServingConfig& config() const { return config_; }

 private:
  const Model& model_;
  const Corpus& corpus_;
  const RetrievalIndex& index_;
  ServingConfig config_;
  std::vector<int> fallback_;
  std::unordered_map<std::int64_t, InstructionCache> caches_;
  mutable std::atomic<std::size_t> misses_{0};
};

ServeRequest parse_serve_request(const std::string& line);
std::string serve_request_json(const ServeRequest& request);
std::string serve_response_json(const ServeResponse& response, bool with_timings = true);

struct LatencyRow {
  int p = 0;
  std::string stage;  // backbone, branches, search, total
  double median_us = 0.0;
  double p95_us = 0.0;
};

// Serves every request `trials` times for each P with conditions[0..P).
std::vector<LatencyRow> latency_bench(const Server& server, std::span<const ServeRequest> requests,
                                      std::span<const int> p_values, int trials, std::span<const int> conditions);

void write_latency_csv(std::ostream& os, std::span<const LatencyRow> rows);

// Nearest-rank percentile, q in (0, 1].
double percentile(std::vector<double> values, double q);

}  // namespace climber
