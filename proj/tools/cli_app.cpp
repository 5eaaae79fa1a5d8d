// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli_app.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "climber/data/jsonl.hpp"
#include "climber/data/synth.hpp"
#include "climber/eval/evaluate.hpp"
#include "climber/model/checkpoint.hpp"
#include "climber/serving/serving.hpp"
#include "climber/train/trainer.hpp"

namespace climber::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kManifest = "manifest.json";

KeyValues eval_and_bench_defaults() {
  KeyValues kv;
  kv.set("eval.mode", "general");
  kv.set("eval.ks", "10,20,50");
  kv.set("eval.horizon", "10");
  kv.set("eval.horizon_k", "50");
  kv.set("eval.condition_family", "genre");
  kv.set("eval.condition_queries", "true");
  kv.set("eval.temporal", "false");
  kv.set("eval.batch_size", "256");
  kv.set("bench.p_values", "1,2,4,8");
  kv.set("bench.trials", "5");
  kv.set("bench.requests", "100");
  return kv;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      out.push_back(static_cast<Index>(v));
    } catch (const std::logic_error&) {
      throw ConfigError(key + ": expected a comma-separated list of positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(key + " is empty");
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

const std::string& input(const Invocation& inv, const std::string& role) {
  const auto it = inv.inputs.find(role);
  if (it == inv.inputs.end()) throw ConfigError(inv.subcommand + ": missing input '" + role + "'");
  return it->second;
}

Corpus load_corpus_for(const Invocation& inv, const ModelConfig& mc) {
  return Corpus(load_corpus(input(inv, "corpus")), mc.num_genres, mc.num_languages);
}

KeyValues data_hashes(const Invocation& inv) {
  KeyValues kv;
  for (const auto& [role, path] : inv.inputs) kv.set("input." + role, git_blob_hash(path));
  return kv;
}

EvalOptions eval_options(const KeyValues& c) {
  EvalOptions o;
  o.mode = parse_eval_mode(c.get("eval.mode"));
  o.ks = parse_index_list("eval.ks", c.get("eval.ks"));
  o.horizon = static_cast<int>(c.get_int("eval.horizon"));
  o.horizon_k = c.get_int("eval.horizon_k");
  o.condition_queries = c.get_bool("eval.condition_queries");
  o.query.family = parse_condition_family(c.get("eval.condition_family"));
  o.query.temporal = c.get_bool("eval.temporal");
  o.query.delta_tau = c.get_int("train.delta_tau");
  o.query.batch_size = static_cast<std::size_t>(std::max<std::int64_t>(1, c.get_int("eval.batch_size")));
  const TrainConfig tc = TrainConfig::from_key_values(c);
  o.split = tc.split;
  if (o.horizon < 1) throw ConfigError("eval.horizon must be >= 1");
  return o;
}

// Adjusts keys that the inputs determine; runs before the manifest is written.
void resolve(Invocation& inv) {
  KeyValues& c = inv.config;
  if (inv.subcommand == "pretrain") {
    const ModelConfig mc = model_config_for(ModelConfig::from_key_values(c),
                                            parse_ablation(c.get("train.ablation")));
    c.merge(mc.to_key_values());
  } else if (inv.subcommand == "sft" || inv.subcommand == "eval" || inv.subcommand == "serve-bench" ||
             inv.subcommand == "serve") {
    const Checkpoint ck = load_checkpoint(input(inv, "checkpoint"));
    c.merge(ck.model.config().to_key_values());
    if (inv.subcommand == "sft" && ck.metadata.contains("train.ablation"))
      c.set("train.ablation", ck.metadata.get("train.ablation"));
  }
  // Parse everything once so bad values fail before any work starts.
  SynthConfig::from_key_values(c);
  ModelConfig::from_key_values(c);
  TrainConfig::from_key_values(c);
  ServingConfig::from_key_values(c);
  eval_options(c);
  parse_index_list("bench.p_values", c.get("bench.p_values"));
}

std::vector<std::string> cmd_datagen(const Invocation& inv) {
  const SynthConfig sc = SynthConfig::from_key_values(inv.config);
  const Dataset ds = generate_dataset(sc);
  const fs::path out(inv.out);
  {
    auto f = open_out(out / "corpus.jsonl");
    write_corpus_jsonl(f, ds.corpus.items());
  }
  {
    auto f = open_out(out / "logs.jsonl");
    write_events_jsonl(f, ds.users);
  }
  std::cerr << "datagen: " << ds.corpus.size() << " items, " << ds.users.size() << " users\n";
  return {"corpus.jsonl", "logs.jsonl"};
}

std::vector<std::string> cmd_train(const Invocation& inv, Stage stage) {
  const TrainConfig tc = TrainConfig::from_key_values(inv.config);
  std::optional<Model> model;
  if (stage == Stage::kPretrain) {
    model.emplace(ModelConfig::from_key_values(inv.config));
  } else {
    model.emplace(load_checkpoint(input(inv, "checkpoint")).model);
  }
  const Corpus corpus = load_corpus_for(inv, model->config());
  const std::vector<UserLog> users = load_events(input(inv, "logs"));
  const fs::path out(inv.out);
  StageResult result;
  {
    auto csv = open_out(out / "loss.csv");
    result = train_stage(*model, corpus, users, tc, stage, &csv);
  }
  KeyValues meta = training_metadata(tc, stage);
  meta.merge(data_hashes(inv));
  save_checkpoint((out / "model.ckpt").string(), *model, meta);
  std::cerr << to_string(stage) << ": " << result.curve.size() << " steps over " << result.examples
            << " examples (" << result.skipped << " skipped)";
  if (!result.curve.empty()) std::cerr << ", final loss " << format_double(result.curve.back().loss);
  std::cerr << '\n';
  return {"loss.csv", "model.ckpt"};
}

std::vector<std::string> cmd_eval(const Invocation& inv) {
  const Checkpoint ck = load_checkpoint(input(inv, "checkpoint"));
  const Corpus corpus = load_corpus_for(inv, ck.model.config());
  const std::vector<UserLog> users = load_events(input(inv, "logs"));
  const EvalOptions opts = eval_options(inv.config);
  const RetrievalIndex index = build_index(ck.model, corpus);
  const EvalReport report = evaluate(index, ck.model, corpus, users, opts);
  const fs::path out(inv.out);
  {
    auto f = open_out(out / "report.csv");
    write_report_csv(f, report);
  }
  write_text(out / "report.json", report_json(report) + "\n");
  std::vector<std::string> outputs = {"report.csv", "report.json"};
  if (report.horizon) {
    auto f = open_out(out / "horizon.csv");
    write_horizon_csv(f, *report.horizon);
    outputs.push_back("horizon.csv");
  }
  std::cout << report_json(report) << '\n';
  return outputs;
}

struct ServingSetup {
  Checkpoint ck;
  Corpus corpus;
  std::vector<UserLog> users;
  ServingConfig config;
  std::vector<int> fallback;
};

ServingSetup serving_setup(const Invocation& inv) {
  ServingSetup s{load_checkpoint(input(inv, "checkpoint")), {}, {}, {}, {}};
  s.corpus = load_corpus_for(inv, s.ck.model.config());
  s.users = load_events(input(inv, "logs"));
  s.config = ServingConfig::from_key_values(inv.config);
  s.fallback = global_popularity(s.corpus, s.users, s.config.family);
  return s;
}

std::vector<std::string> cmd_serve_bench(const Invocation& inv) {
  const ServingSetup s = serving_setup(inv);
  const RetrievalIndex index = build_index(s.ck.model, s.corpus);
  Server server(s.ck.model, s.corpus, index, s.config, s.fallback);
  const TrainConfig tc = TrainConfig::from_key_values(inv.config);

  const auto n = static_cast<std::size_t>(std::max<std::int64_t>(1, inv.config.get_int("bench.requests")));
  std::vector<ServeRequest> requests;
  for (const UserLog& u : s.users) {
    if (requests.size() == n) break;
    const UserSplit split = split_user_log(u, tc.split);
    if (split.test_start == 0 || split.test_start >= u.events.size()) continue;
    ServeRequest r;
    r.user_id = u.user_id;
    r.events.assign(u.events.begin(), u.events.begin() + static_cast<std::ptrdiff_t>(split.test_start));
    r.now = u.events[split.test_start].ts;
    requests.push_back(std::move(r));
  }
  if (requests.empty()) throw DataError("serve-bench: no user has a held-out request");
  // Caches see only the history each request carries.
  for (const ServeRequest& r : requests)
    server.set_cache(r.user_id, precompute_instructions(s.corpus, r.events, s.config.family, s.config.window,
                                                        s.config.top_p, s.fallback));

  const fs::path out(inv.out);
  {
    auto f = open_out(out / "responses.jsonl");
    for (const ServeRequest& r : requests) f << serve_response_json(server.serve(r), false) << '\n';
  }
  const auto p_values = parse_index_list("bench.p_values", inv.config.get("bench.p_values"));
  std::vector<int> ps(p_values.begin(), p_values.end());
  const auto rows = latency_bench(server, requests, ps, static_cast<int>(inv.config.get_int("bench.trials")),
                                  s.fallback);
  {
    auto f = open_out(out / "latency.csv");
    write_latency_csv(f, rows);
  }
  return {"responses.jsonl", "latency.csv"};
}

int cmd_serve(const Invocation& inv) {
  const ServingSetup s = serving_setup(inv);
  const RetrievalIndex index = build_index(s.ck.model, s.corpus);
  Server server(s.ck.model, s.corpus, index, s.config, s.fallback);
  server.precompute(s.users);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    try {
      std::cout << serve_response_json(server.serve(parse_serve_request(line))) << '\n';
    } catch (const DataError& e) {
      std::cout << ordered_json{{"error", e.what()}}.dump() << '\n';
    }
    std::cout.flush();
  }
  return kOk;
}

std::string seed_of(const Invocation& inv) {
  return inv.subcommand == "datagen" ? inv.config.get("data.seed") : inv.config.get("train.seed");
}

}  // namespace

KeyValues default_config() {
  KeyValues kv = SynthConfig{}.to_key_values();
  kv.merge(ModelConfig{}.to_key_values());
  kv.merge(TrainConfig{}.to_key_values());
  kv.merge(ServingConfig{}.to_key_values());
  kv.merge(eval_and_bench_defaults());
  return kv;
}

std::string git_blob_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();
  const std::string header = "blob " + std::to_string(body.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, body.data(), body.size()) && EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw DataError("sha1 failed for " + path);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

std::string manifest_json(const Invocation& inv, const std::map<std::string, std::string>& hashes,
                          const std::vector<std::string>& outputs, const std::string& started_at,
                          const std::string& finished_at, const std::string& status) {
  ordered_json j;
  j["subcommand"] = inv.subcommand;
  j["seed"] = seed_of(inv);
  j["config"] = inv.config.entries();
  j["inputs"] = inv.inputs;
  j["input_hashes"] = hashes;
  j["out"] = inv.out;
  j["outputs"] = outputs;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at.empty() ? ordered_json(nullptr) : ordered_json(finished_at);
  j["status"] = status;
  return j.dump();
}

Invocation read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    Invocation inv;
    inv.subcommand = j.at("subcommand").get<std::string>();
    for (const auto& [k, v] : j.at("config").items()) inv.config.set(k, v.get<std::string>());
    for (const auto& [k, v] : j.at("inputs").items()) inv.inputs[k] = v.get<std::string>();
    inv.out = j.at("out").get<std::string>();
    for (const auto& [role, hash] : j.at("input_hashes").items()) {
      const auto it = inv.inputs.find(role);
      if (it == inv.inputs.end()) throw DataError("manifest hashes an unknown input '" + role + "'");
      if (git_blob_hash(it->second) != hash.get<std::string>())
        throw DataError("input '" + role + "' (" + it->second + ") changed since the manifest was written");
    }
    return inv;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path + ": " + e.what());
  }
}

int execute(const Invocation& original) {
  Invocation inv = original;
  resolve(inv);
  if (inv.subcommand == "serve") return cmd_serve(inv);

  fs::create_directories(inv.out);
  std::map<std::string, std::string> hashes;
  for (const auto& [role, path] : inv.inputs) hashes[role] = git_blob_hash(path);
  const std::string started = utc_now();
  const fs::path manifest = fs::path(inv.out) / kManifest;
  write_text(manifest, manifest_json(inv, hashes, {}, started, "", "running") + "\n");
  try {
    std::vector<std::string> outputs;
    if (inv.subcommand == "datagen") {
      outputs = cmd_datagen(inv);
    } else if (inv.subcommand == "pretrain") {
      outputs = cmd_train(inv, Stage::kPretrain);
    } else if (inv.subcommand == "sft") {
      outputs = cmd_train(inv, Stage::kSft);
    } else if (inv.subcommand == "eval") {
      outputs = cmd_eval(inv);
    } else if (inv.subcommand == "serve-bench") {
      outputs = cmd_serve_bench(inv);
    } else {
      throw ConfigError("unknown subcommand '" + inv.subcommand + "'");
    }
    write_text(manifest, manifest_json(inv, hashes, outputs, started, utc_now(), "ok") + "\n");
  } catch (const std::exception& e) {
    write_text(manifest, manifest_json(inv, hashes, {}, started, utc_now(), std::string("failed: ") + e.what()) +
                             "\n");
    throw;
  }
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"climber: generative retrieval training, evaluation and serving on synthetic logs"};
  app.require_subcommand(1);

  struct Common {
    std::string config_file;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string ablation;
    std::string mode;
    std::string manifest;
  } opt;

  auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", opt.config_file, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", opt.sets, "override one config key (key=value); repeatable");
    sub->add_option("--seed", opt.seed, "random seed");
    auto* out = sub->add_option("--out", opt.out, "output directory");
    if (needs_out) out->required();
  };
  auto data = [&](CLI::App* sub) {
    sub->add_option("--data", opt.data, "directory with corpus.jsonl and logs.jsonl")
        ->required()
        ->check(CLI::ExistingDirectory);
  };
  auto checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", opt.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  };

  auto* datagen = app.add_subcommand("datagen", "generate a synthetic corpus and interaction logs");
  common(datagen, true);
  auto* pretrain = app.add_subcommand("pretrain", "pre-train a retriever (nip, mip or tamip)");
  common(pretrain, true);
  data(pretrain);
  pretrain->add_option("--ablation", opt.ablation, "training objective")
      ->check(CLI::IsMember({"nip", "mip", "tamip"}));
  auto* sft = app.add_subcommand("sft", "fine-tune a pre-trained checkpoint to follow conditions");
  common(sft, true);
  data(sft);
  checkpoint(sft);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval, true);
  data(eval);
  checkpoint(eval);
  eval->add_option("--mode", opt.mode, "evaluation protocol")
      ->check(CLI::IsMember({"general", "conditioned", "horizon"}));
  auto* bench = app.add_subcommand("serve-bench", "serve held-out requests and measure per-stage latency");
  common(bench, true);
  data(bench);
  checkpoint(bench);
  auto* serve = app.add_subcommand("serve", "answer single-line JSON requests from stdin");
  common(serve, false);
  data(serve);
  checkpoint(serve);
  auto* rerun = app.add_subcommand("rerun", "repeat the run recorded in a manifest");
  rerun->add_option("--manifest", opt.manifest, "manifest.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  rerun->add_option("--out", opt.out, "output directory (default: the manifest's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    Invocation inv;
    if (sub == rerun) {
      inv = read_manifest(opt.manifest);
      if (!opt.out.empty()) inv.out = opt.out;
      return execute(inv);
    }
    inv.subcommand = sub->get_name();
    inv.out = opt.out;
    KeyValues config = default_config();
    auto checked_merge = [&](const KeyValues& extra, const std::string& origin) {
      for (const auto& [k, v] : extra.entries())
        if (!config.contains(k)) throw ConfigError("unknown config key '" + k + "' in " + origin);
      config.merge(extra);
    };
    if (!opt.config_file.empty()) checked_merge(KeyValues::load(opt.config_file), opt.config_file);
    for (const std::string& s : opt.sets) {
      KeyValues one;
      one.set_assignment(s);
      checked_merge(one, "--set");
    }
    if (sub->count("--seed")) {
      const std::string seed = std::to_string(opt.seed);
      if (inv.subcommand == "datagen") {
        config.set("data.seed", seed);
      } else {
        config.set("train.seed", seed);
        if (inv.subcommand == "pretrain") config.set("model.init_seed", seed);
      }
    }
    if (!opt.ablation.empty()) config.set("train.ablation", opt.ablation);
    if (!opt.mode.empty()) config.set("eval.mode", opt.mode);
    inv.config = config;
    if (!opt.data.empty()) {
      inv.inputs["corpus"] = (fs::path(opt.data) / "corpus.jsonl").string();
      inv.inputs["logs"] = (fs::path(opt.data) / "logs.jsonl").string();
    }
    if (!opt.checkpoint.empty()) inv.inputs["checkpoint"] = opt.checkpoint;
    return execute(inv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace climber::cli
