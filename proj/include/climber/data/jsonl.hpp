// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "climber/data/types.hpp"

namespace climber {

// Corpus lines: {"item_id":..,"genre":..,"language":..,"release":"new"|"classic"}
void write_corpus_jsonl(std::ostream& out, const std::vector<Item>& items);
std::vector<Item> read_corpus_jsonl(std::istream& in);

// Event lines: {"user_id":..,"item_id":..,"ts":..,"request_id":..,"idx":..}
void write_events_jsonl(std::ostream& out, const std::vector<UserLog>& users);
// Groups events by user in order of first appearance and checks the log
// invariants (per user: nondecreasing ts and request_id; one ts per request).
std::vector<UserLog> read_events_jsonl(std::istream& in);

std::vector<Item> load_corpus(const std::string& path);
std::vector<UserLog> load_events(const std::string& path);

}  // namespace climber
