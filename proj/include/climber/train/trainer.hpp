// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "climber/core/adam.hpp"
#include "climber/core/key_values.hpp"
#include "climber/data/corpus.hpp"
#include "climber/data/splits.hpp"
#include "climber/model/model.hpp"

namespace climber {

enum class Ablation { kNip, kMip, kTamip };
enum class Stage { kPretrain, kSft };

Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation a);
std::string to_string(Stage s);

struct TrainConfig {
  int batch_size = 256;
  double lr_pretrain = 5e-4;
  double lr_sft = 1e-5;
  double weight_decay = 1e-6;
  int pretrain_steps = 500;
  int sft_steps = 500;
  std::int64_t delta_tau = 900;  // seconds; the generator's mean request interval
  std::uint64_t seed = 1;
  ConditionFamily family = ConditionFamily::kGenre;
  Ablation ablation = Ablation::kTamip;
  // Pre-training cuts are event indices divisible by window_stride.
  int window_stride = 1;
  bool freeze_backbone = false;
  SplitConfig split;

  void validate() const;
  KeyValues to_key_values() const;  // train.* keys
  static TrainConfig from_key_values(const KeyValues& kv);
};

// ---------------------------------------------------------------------------
// Examples and masks

struct PretrainExample {
  std::size_t user = 0;
  std::size_t cut = 0;  // event index of i_{n+1}; targets are cut .. cut+K-1
};

// Cuts inside each user's pre-training portion with >= 1 history event and
// all `horizon` targets inside the portion.
std::vector<PretrainExample> build_pretrain_examples(const std::vector<UserLog>& users,
                                                     const SplitConfig& split, int horizon,
                                                     int stride);

// Row of the condition table for category `value` of `family`.
int condition_index(const ModelConfig& config, ConditionFamily family, int value);

// Last min(cut, max_len) events before `cut`.
std::span<const InteractionEvent> context_window(const UserLog& log, std::size_t cut, int max_len);

std::vector<Item> items_of(const Corpus& corpus, std::span<const InteractionEvent> events);

// causal, plus the temporal mask anchored at tau_target when given.
AttentionMask backbone_mask(std::span<const InteractionEvent> context,
                            std::optional<std::int64_t> tau_target, std::int64_t delta_tau);

// causal + condition-sparse(c) + truncation(k), k 1-based.
AttentionMask sft_branch_mask(const Corpus& corpus, std::span<const InteractionEvent> context,
                              ConditionFamily family, int condition, int k);

// ---------------------------------------------------------------------------
// Losses

struct LossTerms {
  Var total;
  std::vector<Var> heads;  // one per branch, each a batch mean
};

// Item ids that serve as candidates for one batch: every target of every
// head, deduplicated, in first-seen order. Each loss term uses the others as
// its negatives.
std::vector<std::int64_t> in_batch_candidates(const std::vector<std::vector<std::int64_t>>& targets);

struct PretrainBatch {
  std::vector<const UserLog*> logs;
  std::vector<std::size_t> cuts;
};

// L_PT = sum_k L^(k): one backbone pass under causal (+temporal for TAMIP)
// masks, K branch passes under the same masks, shared in-batch negatives.
LossTerms pretrain_loss(Tape& tape, const Model& model, const Corpus& corpus,
                        const PretrainBatch& batch, bool temporal, std::int64_t delta_tau);

struct SftBatch {
  std::vector<const UserLog*> logs;
  std::vector<std::size_t> targets;
  std::vector<int> conditions;  // category value under `family`
};

// L_SFT = sum_k L^(k)(i_{n+1} | S_{n-k+1}, c_{n+1}); backbone masks as in
// pre-training, branch masks causal + CGSA + truncation.
LossTerms sft_loss(Tape& tape, const Model& model, const Corpus& corpus, const SftBatch& batch,
                   ConditionFamily family, bool temporal, std::int64_t delta_tau);

// ---------------------------------------------------------------------------
// Optimization

struct StepResult {
  double loss = 0.0;
  std::vector<double> heads;
  std::size_t degenerate_rows = 0;
};

// Parameters updated in `stage`; with freeze_backbone during SFT only branch.*
// and cond_emb move.
std::vector<Parameter*> trainable_parameters(Model& model, Stage stage, bool freeze_backbone);

class Trainer {
 public:
  Trainer(Model& model, const Corpus& corpus, const std::vector<UserLog>& users,
          const TrainConfig& config, Stage stage);

  StepResult step();
  std::size_t num_examples() const;
  std::size_t skipped_examples() const { return skipped_; }
  std::int64_t steps_taken() const { return optimizer_.steps(); }

 private:
  std::vector<std::size_t> next_indices();

  Model& model_;
  const Corpus& corpus_;
  const std::vector<UserLog>& users_;
  TrainConfig config_;
  Stage stage_;
  bool temporal_;
  Adam optimizer_;
  std::vector<Parameter*> trainable_;
  std::vector<PretrainExample> pretrain_examples_;
  SftDataset sft_;
  std::size_t skipped_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

struct StageResult {
  std::vector<StepResult> curve;
  std::size_t examples = 0;
  std::size_t skipped = 0;
};

// Runs `steps` optimizer steps and writes "step,loss,head_1..head_K" rows
// to `loss_csv` when given. Non-finite losses raise NumericalError naming
// the step.
StageResult train_stage(Model& model, const Corpus& corpus, const std::vector<UserLog>& users,
                        const TrainConfig& config, Stage stage, std::ostream* loss_csv);

// Fresh model for a pre-training run: NIP forces a single branch.
ModelConfig model_config_for(ModelConfig base, Ablation ablation);

// Metadata stored next to trained weights.
KeyValues training_metadata(const TrainConfig& config, Stage stage);

}  // namespace climber
