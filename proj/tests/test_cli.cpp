// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "cli_app.hpp"

namespace fs = std::filesystem;
using namespace climber;

namespace {

int run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> storage = {"climber"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("climber_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kTinyData = {"--set", "data.num_users=40", "--set", "data.num_items=200",
                                            "--set", "data.requests_per_user=10"};

int datagen(const fs::path& out, std::uint64_t seed = 5) {
  std::vector<std::string> storage = {"climber", "datagen", "--out", out.string(), "--seed", std::to_string(seed)};
  storage.insert(storage.end(), kTinyData.begin(), kTinyData.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli({}) == cli::kUsage);
  CHECK(run_cli({"train"}) == cli::kUsage);
  CHECK(run_cli({"datagen"}) == cli::kUsage);  // --out is required
  const fs::path d = scratch("usage");
  REQUIRE(datagen(d / "data") == cli::kOk);
  CHECK(run_cli({"sft", "--data", (d / "data").string(), "--out", (d / "sft").string()}) == cli::kUsage);
  CHECK(run_cli({"datagen", "--out", (d / "x").string(), "--set", "data.no_such_key=1"}) == cli::kUsage);
  CHECK(run_cli({"datagen", "--out", (d / "x").string(), "--set", "data.num_users=-3"}) == cli::kUsage);
  CHECK(run_cli({"pretrain", "--data", (d / "data").string(), "--out", (d / "p").string(), "--ablation", "ntp"}) ==
        cli::kUsage);
  CHECK(run_cli({"--help"}) == cli::kOk);
}

TEST_CASE("data errors exit 2, numerical failures exit 3") {
  const fs::path d = scratch("errors");
  fs::create_directories(d / "bad");
  std::ofstream(d / "bad" / "corpus.jsonl") << "{oops\n";
  std::ofstream(d / "bad" / "logs.jsonl") << "";
  CHECK(run_cli({"pretrain", "--data", (d / "bad").string(), "--out", (d / "p").string()}) == cli::kDataError);

  REQUIRE(datagen(d / "data") == cli::kOk);
  CHECK(run_cli({"pretrain", "--data", (d / "data").string(), "--out", (d / "nan").string(), "--set",
             "train.pretrain_steps=20", "--set", "train.batch_size=8", "--set", "train.lr_pretrain=1e300"}) ==
        cli::kNumerical);
  const auto m = nlohmann::json::parse(slurp(d / "nan" / "manifest.json"));
  CHECK(m.at("status").get<std::string>().rfind("failed", 0) == 0);
}

TEST_CASE("git blob hash") {
  const fs::path d = scratch("hash");
  fs::create_directories(d);
  std::ofstream(d / "hello.txt") << "hello\n";
  CHECK(cli::git_blob_hash((d / "hello.txt").string()) == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("pipeline runs and repeats byte for byte") {
  const fs::path d = scratch("pipeline");
  REQUIRE(datagen(d / "data") == cli::kOk);
  REQUIRE(datagen(d / "data2") == cli::kOk);
  CHECK(slurp(d / "data" / "logs.jsonl") == slurp(d / "data2" / "logs.jsonl"));
  CHECK(slurp(d / "data" / "corpus.jsonl") == slurp(d / "data2" / "corpus.jsonl"));
  REQUIRE(datagen(d / "data3", 6) == cli::kOk);
  CHECK(slurp(d / "data" / "logs.jsonl") != slurp(d / "data3" / "logs.jsonl"));

  const std::string data = (d / "data").string();
  const std::string pt = (d / "pt").string();
  REQUIRE(run_cli({"pretrain", "--data", data, "--out", pt, "--set", "train.pretrain_steps=3", "--set",
               "train.batch_size=8"}) == cli::kOk);
  const std::string ck = (d / "pt" / "model.ckpt").string();
  REQUIRE(run_cli({"sft", "--data", data, "--checkpoint", ck, "--out", (d / "sft").string(), "--set",
               "train.sft_steps=2", "--set", "train.batch_size=8"}) == cli::kOk);
  const std::string sck = (d / "sft" / "model.ckpt").string();
  REQUIRE(run_cli({"eval", "--data", data, "--checkpoint", sck, "--out", (d / "ev").string(), "--mode",
               "conditioned"}) == cli::kOk);
  REQUIRE(run_cli({"serve-bench", "--data", data, "--checkpoint", sck, "--out", (d / "sb").string(), "--set",
               "bench.requests=5", "--set", "bench.trials=1"}) == cli::kOk);

  const auto manifest = nlohmann::json::parse(slurp(d / "pt" / "manifest.json"));
  CHECK(manifest.at("subcommand") == "pretrain");
  CHECK(manifest.at("status") == "ok");
  CHECK(manifest.at("input_hashes").at("logs") == cli::git_blob_hash(data + "/logs.jsonl"));
  CHECK(slurp(d / "ev" / "report.csv").rfind("metric,k,value\n", 0) == 0);
  CHECK(nlohmann::json::parse(slurp(d / "ev" / "report.json")).contains("cc@50"));

  for (const std::string run : {"pt", "sft", "ev", "sb"}) {
    const fs::path again = d / (run + "_again");
    REQUIRE(run_cli({"rerun", "--manifest", (d / run / "manifest.json").string(), "--out", again.string()}) == cli::kOk);
    for (const auto& entry : fs::directory_iterator(d / run)) {
      const std::string name = entry.path().filename().string();
      if (name == "manifest.json" || name == "latency.csv") continue;
      INFO(run << "/" << name);
      CHECK(slurp(entry.path()) == slurp(again / name));
    }
  }
}

TEST_CASE("a changed input is refused on rerun") {
  const fs::path d = scratch("tamper");
  REQUIRE(datagen(d / "data") == cli::kOk);
  const std::string data = (d / "data").string();
  REQUIRE(run_cli({"pretrain", "--data", data, "--out", (d / "pt").string(), "--set", "train.pretrain_steps=1", "--set",
               "train.batch_size=4"}) == cli::kOk);
  std::ofstream(d / "data" / "logs.jsonl", std::ios::app) << "\n";
  CHECK(run_cli({"rerun", "--manifest", (d / "pt" / "manifest.json").string(), "--out", (d / "again").string()}) ==
        cli::kDataError);
}
