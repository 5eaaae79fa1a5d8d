// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/data/splits.hpp"

#include <algorithm>
#include <cmath>

#include "climber/core/tensor.hpp"

namespace climber {

std::vector<std::size_t> request_starts(const std::vector<InteractionEvent>& events) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < events.size(); ++i)
    if (i == 0 || events[i].request_id != events[i - 1].request_id) starts.push_back(i);
  return starts;
}

namespace {

// First request index >= r whose start is strictly later than the previous
// request's timestamp; starts.size() when none.
std::size_t strict_boundary(const std::vector<InteractionEvent>& ev,
                            const std::vector<std::size_t>& starts, std::size_t r) {
  while (r > 0 && r < starts.size() && ev[starts[r]].ts == ev[starts[r] - 1].ts) ++r;
  return r;
}

}  // namespace

UserSplit split_user_log(const UserLog& log, const SplitConfig& config) {
  if (!(config.pretrain_fraction >= 0.0 && config.pretrain_fraction <= 1.0))
    throw ConfigError("split: pretrain_fraction must lie in [0, 1]");
  if (config.test_requests < 0) throw ConfigError("split: test_requests must be >= 0");
  const auto& ev = log.events;
  const auto starts = request_starts(ev);
  const std::size_t num_requests = starts.size();
  auto event_index = [&](std::size_t r) { return r >= num_requests ? ev.size() : starts[r]; };

  const std::size_t test_req = num_requests > static_cast<std::size_t>(config.test_requests)
                                   ? num_requests - static_cast<std::size_t>(config.test_requests)
                                   : 0;
  const auto pre_req = static_cast<std::size_t>(
      std::floor(config.pretrain_fraction * static_cast<double>(num_requests)));
  UserSplit s;
  s.pretrain_end = event_index(strict_boundary(ev, starts, std::min(pre_req, test_req)));
  s.test_start = std::max(s.pretrain_end, event_index(strict_boundary(ev, starts, test_req)));
  return s;
}

SftDataset build_sft_dataset(const Corpus& corpus, const std::vector<UserLog>& users,
                             ConditionFamily family, const SplitConfig& split) {
  const int vocab = corpus.vocab_size(family);
  if (vocab <= 0) throw ConfigError("build_sft_dataset: empty condition family " + to_string(family));
  if (users.empty()) throw DataError("build_sft_dataset: no logs");
  SftDataset ds;
  ds.family = family;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const UserSplit s = split_user_log(users[u], split);
    for (std::size_t t = s.pretrain_end; t < s.test_start; ++t) {
      const int c = category_of(corpus.at(users[u].events[t].item_id), family);
      if (t == 0 || c < 0 || c >= vocab) {
        ++ds.skipped;
        continue;
      }
      ds.triples.push_back({u, t, c});
    }
  }
  return ds;
}

ConsumptionLagReport consumption_lag_report(const std::vector<UserLog>& users, std::size_t context,
                                            std::int64_t delta_tau) {
  ConsumptionLagReport r;
  double masked = 0, same = 0, earlier = 0, positions = 0;
  for (const UserLog& u : users) {
    const auto& ev = u.events;
    for (std::size_t cut = 1; cut < ev.size(); ++cut) {
      const std::int64_t tau = ev[cut].ts;
      const std::size_t begin = cut > context ? cut - context : 0;
      for (std::size_t j = begin; j < cut; ++j) {
        positions += 1;
        if (ev[j].ts < tau - delta_tau || ev[j].ts > tau) continue;
        masked += 1;
        (ev[j].request_id == ev[cut].request_id ? same : earlier) += 1;
      }
      ++r.cuts;
    }
  }
  if (r.cuts > 0) {
    const double n = static_cast<double>(r.cuts);
    r.mean_masked = masked / n;
    r.mean_masked_same_request = same / n;
    r.mean_masked_earlier = earlier / n;
    r.fraction_masked = positions > 0 ? masked / positions : 0.0;
  }
  return r;
}

}  // namespace climber
