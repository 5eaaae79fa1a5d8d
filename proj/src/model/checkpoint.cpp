// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/model/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace climber {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'M', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint: truncated file");
  return v;
}

std::string take_string(std::istream& in, std::uint64_t len) {
  if (len > (1ull << 30)) throw DataError("checkpoint: corrupt length field");
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw DataError("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model, const KeyValues& metadata) {
  KeyValues header = model.config().to_key_values();
  for (const auto& [k, v] : metadata.entries()) {
    if (k.rfind("model.", 0) == 0) throw ConfigError("checkpoint metadata key " + k + " collides with model config");
    header.set(k, v);
  }
  const std::string text = header.format();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.parameters();
  put<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::int64_t>(out, p->value.rows());
    put<std::int64_t>(out, p->value.cols());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(p->value.size())));
  }
  if (!out) throw DataError("checkpoint: write failed");
}

void save_checkpoint(const std::string& path, const Model& model, const KeyValues& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  save_checkpoint(out, model, metadata);
}

Checkpoint load_checkpoint(std::istream& in, const std::optional<ModelConfig>& expected) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic");
  const auto version = take<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  const KeyValues header = KeyValues::parse(take_string(in, take<std::uint64_t>(in)));
  const ModelConfig config = ModelConfig::from_key_values(header);
  if (expected && !(*expected == config))
    throw ConfigError("checkpoint: stored model config does not match the requested config");

  Checkpoint ck{Model(config), {}};
  for (const auto& [k, v] : header.entries())
    if (k.rfind("model.", 0) != 0) ck.metadata.set(k, v);
  const auto count = take<std::uint64_t>(in);
  if (count != ck.model.parameters().size())
    throw ConfigError("checkpoint: " + std::to_string(count) + " tensors but the config implies " +
                      std::to_string(ck.model.parameters().size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = take_string(in, take<std::uint32_t>(in));
    const auto rows = take<std::int64_t>(in);
    const auto cols = take<std::int64_t>(in);
    Parameter& p = ck.model.param(name);
    if (rows != p.value.rows() || cols != p.value.cols())
      throw ConfigError("checkpoint: tensor " + name + " has shape (" + std::to_string(rows) + "x" +
                        std::to_string(cols) + "), expected " + shape_string(p.value));
    if (!in.read(reinterpret_cast<char*>(p.value.data()),
                 static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(p.value.size()))))
      throw DataError("checkpoint: truncated tensor " + name);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return load_checkpoint(in, expected);
}

}  // namespace climber
