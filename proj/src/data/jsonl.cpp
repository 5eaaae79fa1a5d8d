// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/data/jsonl.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "climber/core/tensor.hpp"

namespace climber {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end())
    throw DataError("line " + std::to_string(line) + ": missing key '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError("line " + std::to_string(line) + ": bad value for '" + key + "'");
  }
}

json parse_line(const std::string& text, std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("line " + std::to_string(line) + ": " + e.what());
  }
}

}  // namespace

void write_corpus_jsonl(std::ostream& out, const std::vector<Item>& items) {
  for (const Item& it : items) {
    json j;
    j["item_id"] = it.item_id;
    j["genre"] = it.genre;
    j["language"] = it.language;
    j["release"] = it.release == ReleaseBucket::kNew ? "new" : "classic";
    out << j.dump() << '\n';
  }
}

std::vector<Item> read_corpus_jsonl(std::istream& in) {
  std::vector<Item> items;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line, line_no);
    Item it;
    it.item_id = field<std::int64_t>(j, "item_id", line_no);
    it.genre = field<int>(j, "genre", line_no);
    it.language = field<int>(j, "language", line_no);
    const auto release = field<std::string>(j, "release", line_no);
    if (release == "new")
      it.release = ReleaseBucket::kNew;
    else if (release == "classic")
      it.release = ReleaseBucket::kClassic;
    else
      throw DataError("line " + std::to_string(line_no) + ": release must be new or classic");
    items.push_back(it);
  }
  return items;
}

void write_events_jsonl(std::ostream& out, const std::vector<UserLog>& users) {
  for (const UserLog& u : users) {
    for (const InteractionEvent& e : u.events) {
      json j;
      j["user_id"] = e.user_id;
      j["item_id"] = e.item_id;
      j["ts"] = e.ts;
      j["request_id"] = e.request_id;
      j["idx"] = e.idx;
      out << j.dump() << '\n';
    }
  }
}

std::vector<UserLog> read_events_jsonl(std::istream& in) {
  std::vector<UserLog> users;
  std::unordered_map<std::int64_t, std::size_t> slot;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line, line_no);
    InteractionEvent e;
    e.user_id = field<std::int64_t>(j, "user_id", line_no);
    e.item_id = field<std::int64_t>(j, "item_id", line_no);
    e.ts = field<std::int64_t>(j, "ts", line_no);
    e.request_id = field<std::int64_t>(j, "request_id", line_no);
    e.idx = field<int>(j, "idx", line_no);
    auto [it, inserted] = slot.try_emplace(e.user_id, users.size());
    if (inserted) users.push_back({e.user_id, {}});
    auto& events = users[it->second].events;
    if (!events.empty()) {
      const InteractionEvent& prev = events.back();
      if (e.ts < prev.ts || e.request_id < prev.request_id)
        throw DataError("line " + std::to_string(line_no) + ": user " + std::to_string(e.user_id) +
                        " log goes back in time or request order");
      if (e.request_id == prev.request_id && e.ts != prev.ts)
        throw DataError("line " + std::to_string(line_no) + ": request " +
                        std::to_string(e.request_id) + " has more than one timestamp");
    }
    events.push_back(e);
  }
  return users;
}

std::vector<Item> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return read_corpus_jsonl(in);
}

std::vector<UserLog> load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file " + path);
  return read_events_jsonl(in);
}

}  // namespace climber
