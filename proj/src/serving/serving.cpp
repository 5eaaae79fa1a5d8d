// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/serving/serving.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>

#include <json.hpp>

#include "climber/eval/evaluate.hpp"
#include "climber/train/trainer.hpp"

namespace climber {

namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

void ServingConfig::validate() const {
  if (top_p < 1) throw ConfigError("serve.top_p must be >= 1");
  if (window < 1) throw ConfigError("serve.window must be >= 1");
  if (delta_tau < 0) throw ConfigError("serve.delta_tau must be >= 0");
  if (k < 1) throw ConfigError("serve.k must be >= 1");
}

KeyValues ServingConfig::to_key_values() const {
  KeyValues kv;
  kv.set("serve.top_p", std::to_string(top_p));
  kv.set("serve.window", std::to_string(window));
  kv.set("serve.condition_family", to_string(family));
  kv.set("serve.temporal", temporal ? "true" : "false");
  kv.set("serve.delta_tau", std::to_string(delta_tau));
  kv.set("serve.k", std::to_string(k));
  return kv;
}

ServingConfig ServingConfig::from_key_values(const KeyValues& kv) {
  ServingConfig c;
  if (kv.contains("serve.top_p")) c.top_p = static_cast<int>(kv.get_int("serve.top_p"));
  if (kv.contains("serve.window")) c.window = static_cast<int>(kv.get_int("serve.window"));
  if (kv.contains("serve.condition_family")) c.family = parse_condition_family(kv.get("serve.condition_family"));
  if (kv.contains("serve.temporal")) c.temporal = kv.get_bool("serve.temporal");
  if (kv.contains("serve.delta_tau")) c.delta_tau = kv.get_int("serve.delta_tau");
  if (kv.contains("serve.k")) c.k = kv.get_int("serve.k");
  c.validate();
  return c;
}

std::vector<int> rank_categories(const Corpus& corpus, std::span<const InteractionEvent> events,
                                 ConditionFamily family) {
  std::map<int, std::size_t> counts;
  for (const InteractionEvent& e : events) ++counts[category_of(corpus.at(e.item_id), family)];
  std::vector<std::pair<int, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is id-ordered, so a stable sort keeps ascending ids within ties.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<int> out;
  out.reserve(ranked.size());
  for (const auto& [c, n] : ranked) out.push_back(c);
  return out;
}

std::vector<int> global_popularity(const Corpus& corpus, const std::vector<UserLog>& users,
                                   ConditionFamily family) {
  std::vector<InteractionEvent> all;
  for (const UserLog& u : users) all.insert(all.end(), u.events.begin(), u.events.end());
  return rank_categories(corpus, all, family);
}

InstructionCache precompute_instructions(const Corpus& corpus, std::span<const InteractionEvent> events,
                                         ConditionFamily family, int window, int top_p,
                                         std::span<const int> fallback, std::optional<std::int64_t> now) {
  if (top_p < 1) throw ConfigError("precompute_instructions: P must be >= 1");
  if (window < 0) throw ConfigError("precompute_instructions: window must be >= 0");
  const std::size_t w = std::min(events.size(), static_cast<std::size_t>(window));
  const auto recent = events.subspan(events.size() - w);
  if (recent.empty() && fallback.empty())
    throw DataError("precompute_instructions: empty window and no fallback conditions");
  InstructionCache cache;
  cache.window = window;
  cache.computed_at = now ? *now : (recent.empty() ? 0 : recent.back().ts);
  const auto p = static_cast<std::size_t>(top_p);
  for (int c : rank_categories(corpus, recent, family)) {
    if (cache.conditions.size() == p) break;
    cache.conditions.push_back(c);
  }
  for (int c : fallback) {
    if (cache.conditions.size() == p) break;
    if (std::find(cache.conditions.begin(), cache.conditions.end(), c) == cache.conditions.end())
      cache.conditions.push_back(c);
  }
  return cache;
}

BatchedInference batched_infer(const Model& model, const Corpus& corpus,
                               std::span<const InteractionEvent> events, std::span<const int> conditions,
                               const ServingConfig& config, std::optional<std::int64_t> now) {
  if (events.empty()) throw DataError("batched_infer: empty event sequence");
  if (conditions.empty()) throw ConfigError("batched_infer: no conditions");
  const auto len = std::min(events.size(), static_cast<std::size_t>(model.config().max_seq_len));
  const auto ctx = events.subspan(events.size() - len);
  std::optional<std::int64_t> tau;
  if (config.temporal) tau = now ? *now : events.back().ts;

  BatchedInference out;
  Tape tape(false);
  const auto t0 = Clock::now();
  std::vector<SequenceInput> seq;
  seq.push_back({items_of(corpus, ctx), backbone_mask(ctx, tau, config.delta_tau)});
  const BackboneState state = model.encode(tape, seq);
  const auto t1 = Clock::now();
  for (int c : conditions) {
    ConditionOutput o;
    o.condition = c;
    try {
      const BranchQuery q = first_branch_query(model, corpus, ctx, seq[0].mask, c, config.family, 0);
      o.query = model.branch_forward(tape, state, 0, std::span(&q, 1)).value().row(0);
    } catch (const DataError& e) {
      o.error = e.what();
    }
    out.outputs.push_back(std::move(o));
  }
  const auto t2 = Clock::now();
  out.backbone_us = micros(t0, t1);
  out.branches_us = micros(t1, t2);
  return out;
}

Server::Server(const Model& model, const Corpus& corpus, const RetrievalIndex& index, ServingConfig config,
               std::vector<int> fallback)
    : model_(model), corpus_(corpus), index_(index), config_(std::move(config)), fallback_(std::move(fallback)) {
  config_.validate();
  if (index_.source() != model_fingerprint(model_))
    throw ConfigError("Server: index was built from a different checkpoint");
}

void Server::set_cache(std::int64_t user_id, InstructionCache cache) { caches_[user_id] = std::move(cache); }

void Server::precompute(const std::vector<UserLog>& users) {
  for (const UserLog& u : users)
    set_cache(u.user_id, precompute_instructions(corpus_, u.events, config_.family, config_.window, config_.top_p,
                                                 fallback_));
}

const InstructionCache* Server::cache(std::int64_t user_id) const {
  const auto it = caches_.find(user_id);
  return it == caches_.end() ? nullptr : &it->second;
}

ServeResponse Server::serve(const ServeRequest& request) const {
  const auto t0 = Clock::now();
  InstructionCache fresh;
  const InstructionCache* c = cache(request.user_id);
  const bool miss = c == nullptr;
  if (miss) {
    ++misses_;
    fresh = precompute_instructions(corpus_, request.events, config_.family, config_.window, config_.top_p,
                                    fallback_, request.now);
    c = &fresh;
  }
  ServeResponse r = serve_with(request, c->conditions);
  r.cache_computed_at = c->computed_at;
  r.cache_miss = miss;
  r.timings.total_us = micros(t0, Clock::now());
  return r;
}

ServeResponse Server::serve_with(const ServeRequest& request, std::span<const int> conditions) const {
  const auto t0 = Clock::now();
  ServeResponse r;
  r.user_id = request.user_id;
  const Index k = std::min(request.k.value_or(config_.k), index_.size());
  const BatchedInference inf = batched_infer(model_, corpus_, request.events, conditions, config_, request.now);
  const auto t1 = Clock::now();
  for (const ConditionOutput& o : inf.outputs) {
    ConditionResult cr;
    cr.condition = o.condition;
    cr.error = o.error;
    if (o.query) cr.items = top_k(index_, *o.query, k);
    r.results.push_back(std::move(cr));
  }
  const auto t2 = Clock::now();
  r.timings.backbone_us = inf.backbone_us;
  r.timings.branches_us = inf.branches_us;
  r.timings.search_us = micros(t1, t2);
  r.timings.total_us = micros(t0, t2);
  return r;
}

ServeRequest parse_serve_request(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("serve request: ") + e.what());
  }
  try {
    ServeRequest r;
    r.user_id = j.at("user_id").get<std::int64_t>();
    if (j.contains("k")) r.k = j.at("k").get<Index>();
    if (j.contains("now")) r.now = j.at("now").get<std::int64_t>();
    std::int64_t last = std::numeric_limits<std::int64_t>::min();
    for (const auto& e : j.at("events")) {
      InteractionEvent ev;
      ev.user_id = r.user_id;
      ev.item_id = e.at("item_id").get<std::int64_t>();
      ev.ts = e.at("ts").get<std::int64_t>();
      if (ev.ts < last) throw DataError("serve request: events out of timestamp order");
      last = ev.ts;
      ev.idx = static_cast<std::int64_t>(r.events.size());
      r.events.push_back(ev);
    }
    if (r.k && *r.k < 1) throw DataError("serve request: k must be >= 1");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("serve request: ") + e.what());
  }
}

std::string serve_request_json(const ServeRequest& request) {
  nlohmann::ordered_json j;
  j["user_id"] = request.user_id;
  if (request.k) j["k"] = *request.k;
  if (request.now) j["now"] = *request.now;
  j["events"] = nlohmann::json::array();
  for (const InteractionEvent& e : request.events) j["events"].push_back({{"item_id", e.item_id}, {"ts", e.ts}});
  return j.dump();
}

std::string serve_response_json(const ServeResponse& response, bool with_timings) {
  nlohmann::ordered_json j;
  j["user_id"] = response.user_id;
  j["cache_computed_at"] = response.cache_computed_at;
  j["cache_miss"] = response.cache_miss;
  j["results"] = nlohmann::json::array();
  for (const ConditionResult& r : response.results) {
    nlohmann::ordered_json e;
    e["condition"] = r.condition;
    if (r.error.empty()) {
      e["items"] = r.items;
    } else {
      e["error"] = r.error;
    }
    j["results"].push_back(e);
  }
  if (with_timings) {
    j["latency_us"] = {{"backbone", response.timings.backbone_us},
                       {"branches", response.timings.branches_us},
                       {"search", response.timings.search_us},
                       {"total", response.timings.total_us}};
  }
  return j.dump();
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

std::vector<LatencyRow> latency_bench(const Server& server, std::span<const ServeRequest> requests,
                                      std::span<const int> p_values, int trials, std::span<const int> conditions) {
  if (requests.empty()) throw DataError("latency_bench: no requests");
  std::vector<LatencyRow> rows;
  for (int p : p_values) {
    if (p < 1 || static_cast<std::size_t>(p) > conditions.size())
      throw ConfigError("latency_bench: P=" + std::to_string(p) + " exceeds the available conditions");
    const auto conds = conditions.first(static_cast<std::size_t>(p));
    server.serve_with(requests.front(), conds);  // warm-up
    std::vector<double> backbone, branches, search, total;
    for (int t = 0; t < trials; ++t)
      for (const ServeRequest& req : requests) {
        const ServeResponse r = server.serve_with(req, conds);
        backbone.push_back(r.timings.backbone_us);
        branches.push_back(r.timings.branches_us);
        search.push_back(r.timings.search_us);
        total.push_back(r.timings.total_us);
      }
    for (auto [name, v] : {std::pair{"backbone", &backbone}, std::pair{"branches", &branches},
                           std::pair{"search", &search}, std::pair{"total", &total}})
      rows.push_back({p, name, percentile(*v, 0.5), percentile(*v, 0.95)});
  }
  return rows;
}

void write_latency_csv(std::ostream& os, std::span<const LatencyRow> rows) {
  os << "P,stage,median_us,p95_us\n";
  for (const LatencyRow& r : rows)
    os << r.p << ',' << r.stage << ',' << format_double(r.median_us) << ',' << format_double(r.p95_us) << '\n';
}

}  // namespace climber
