// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "climber/data/corpus.hpp"
#include "climber/data/types.hpp"

namespace climber {

// Per-user time split: [0, pretrain_end) pre-training, [pretrain_end,
// test_start) SFT, [test_start, end) held out for evaluation. Both cut points
// sit on request boundaries whose timestamp is strictly later than the
// previous request's, so the portions are disjoint in time.
struct SplitConfig {
  double pretrain_fraction = 0.7;
  int test_requests = 2;
};

struct UserSplit {
  std::size_t pretrain_end = 0;
  std::size_t test_start = 0;
};

// Event indices where a new request begins (always includes 0 for a nonempty log).
std::vector<std::size_t> request_starts(const std::vector<InteractionEvent>& events);

UserSplit split_user_log(const UserLog& log, const SplitConfig& config);

struct SftTriple {
  std::size_t user = 0;    // index into the user list
  std::size_t target = 0;  // event index of i_{n+1}; context is everything before it
  int condition = 0;       // category of the target under the chosen family
};

struct SftDataset {
  ConditionFamily family = ConditionFamily::kGenre;
  std::vector<SftTriple> triples;
  std::size_t skipped = 0;  // targets without history or outside the family vocabulary
};

// One triple per SFT-portion event that has at least one history event.
SftDataset build_sft_dataset(const Corpus& corpus, const std::vector<UserLog>& users,
                             ConditionFamily family, const SplitConfig& split);

// How much history a temporal mask of width delta_tau removes at every
// pre-training cut (context of up to `context` events, target = event at cut).
struct ConsumptionLagReport {
  std::size_t cuts = 0;
  double mean_masked = 0.0;             // masked context positions per cut
  double mean_masked_same_request = 0.0;  // ... that share the target's request
  double mean_masked_earlier = 0.0;       // ... from earlier requests
  double fraction_masked = 0.0;           // masked / context positions
};

ConsumptionLagReport consumption_lag_report(const std::vector<UserLog>& users, std::size_t context,
                                            std::int64_t delta_tau);

}  // namespace climber
