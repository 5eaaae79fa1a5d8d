// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace climber {

enum class ReleaseBucket : int { kNew = 0, kClassic = 1 };

struct Item {
  std::int64_t item_id = 0;
  int genre = 0;
  int language = 0;
  ReleaseBucket release = ReleaseBucket::kClassic;

  friend bool operator==(const Item&, const Item&) = default;
};

// One exposure. Events of one request share request_id and ts; idx is the
// position inside the request and carries no ordering signal.
struct InteractionEvent {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::int64_t ts = 0;  // seconds
  std::int64_t request_id = 0;
  int idx = 0;

  friend bool operator==(const InteractionEvent&, const InteractionEvent&) = default;
};

struct UserLog {
  std::int64_t user_id = 0;
  std::vector<InteractionEvent> events;
};

// Attribute family a retrieval condition is drawn from.
enum class ConditionFamily { kGenre, kLanguage, kRelease };

ConditionFamily parse_condition_family(const std::string& name);
std::string to_string(ConditionFamily family);

// Category of `item` under `family`.
int category_of(const Item& item, ConditionFamily family);

}  // namespace climber
