// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "climber/core/key_values.hpp"

namespace climber::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

// Every recognised key with its default value.
KeyValues default_config();

// Git blob hash (SHA-1 of "blob <size>\0" + content) of a file.
std::string git_blob_hash(const std::string& path);

struct Invocation {
  std::string subcommand;
  KeyValues config;                           // fully resolved
  std::map<std::string, std::string> inputs;  // role -> path
  std::string out;
};

std::string manifest_json(const Invocation& inv, const std::map<std::string, std::string>& hashes,
                          const std::vector<std::string>& outputs, const std::string& started_at,
                          const std::string& finished_at, const std::string& status);
Invocation read_manifest(const std::string& path);

// Runs one invocation; returns the process exit code.
int execute(const Invocation& inv);

// Full command line entry point.
int run(int argc, char** argv);

}  // namespace climber::cli
