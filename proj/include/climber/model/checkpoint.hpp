// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "climber/core/key_values.hpp"
#include "climber/model/model.hpp"

namespace climber {

// Binary checkpoint, little-endian host layout:
//   "CLMBCKPT" | u32 format version | u64 header length | header text
//   | u64 tensor count | per tensor: u32 name length, name, i64 rows,
//   i64 cols, rows*cols doubles
// The header is key=value text holding the model config (model.*) and free
// metadata (anything else, e.g. train.*).
struct Checkpoint {
  Model model;
  KeyValues metadata;
};

void save_checkpoint(std::ostream& out, const Model& model, const KeyValues& metadata);
void save_checkpoint(const std::string& path, const Model& model, const KeyValues& metadata);

// Throws ConfigError when `expected` is given and differs from the stored config.
Checkpoint load_checkpoint(std::istream& in, const std::optional<ModelConfig>& expected = std::nullopt);
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace climber
