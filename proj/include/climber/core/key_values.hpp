// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace climber {

// Flat, ordered key=value settings. Text form is one "key=value" per line;
// blank lines and lines starting with '#' are ignored.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);
  std::string format() const;

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  // "key=value" override as given on a command line.
  void set_assignment(const std::string& assignment);
  void merge(const KeyValues& other);

  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  // Entries under `prefix`, with the prefix stripped.
  KeyValues subset(const std::string& prefix) const;

  friend bool operator==(const KeyValues&, const KeyValues&) = default;

 private:
  std::map<std::string, std::string> values_;
};

// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace climber
