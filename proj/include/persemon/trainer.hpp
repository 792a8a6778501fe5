#pragma once

#include <optional>
#include <string>
#include <vector>

#include "persemon/dataset_io.hpp"
#include "persemon/losses.hpp"
#include "persemon/model.hpp"

namespace persemon {

struct AblationFlags {
  bool disable_personality = false;
  bool disable_emotion = false;
  bool disable_ram = false;
  bool disable_coherence = false;
  Consensus consensus = Consensus::kAverage;
  bool consensus_post_squash = false;
  bool ram_stop_gradient = false;
};

struct TrainConfig {
  Preset preset = Preset::kMicro;
  double lr0 = 0.01;
  double momentum = 0.9;
  double decay_factor = 0.1;
  int total_steps = 4000;
  std::vector<int> decay_steps;  // empty -> milestones at 4/7 and 6/7 of total
  int n_emotion = 32;
  int n_videos = 4;
  int k = 10;
  LossWeights weights;
  Reduction reduction = Reduction::kMean;
  AblationFlags ablation;
  uint64_t seed = 1;
  int checkpoint_interval = 0;  // 0: final checkpoint only
  bool save_momentum = true;

  std::vector<int> effective_decay_steps() const;
  LossOptions loss_options() const;
  TermSelection main_terms() const;  // sub-update (b): classifier term excluded
  bool coherence_active() const;
  void validate(const Dataset& data) const;  // throws ConfigError before step 0
};

// lr0 * decay_factor^(#milestones <= step).
double lr_at(int step, const TrainConfig& cfg);

// Segmental consensus over per-frame rows; AVERAGE -> mean, MAX -> per-dim max.
inline ad::Value consensus_variant(const ad::Value& rows, Consensus c) {
  return apply_consensus(rows, c);
}

struct StepRecord {
  int64_t step = 0;
  double lr = 0.0;
  LossTerms terms;  // weighted_total includes the classifier term
  double gnorm_fem = 0.0, gnorm_pam = 0.0, gnorm_eam = 0.0, gnorm_ram = 0.0, gnorm_disc = 0.0;
};

struct TrainState {
  Model model;
  int64_t step = 0;

  static TrainState init(const TrainConfig& cfg);
};

// Mini-batch for a given step; a pure function of (config, step), so batches
// can be produced in any order or ahead of time.
Batch batch_for_step(const Dataset& data, const TrainConfig& cfg, int64_t step);

// Two sub-updates in order: (a) SGD on the dataset classifier under
// lambda3*L_D with everything else frozen; (b) SGD on backbone+heads under
// the remaining weighted terms with the classifier frozen.
// Non-finite loss or gradients -> NumericError carrying a diagnostic dump.
StepRecord train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg);

void sgd_update(const std::vector<ad::ParamPtr>& group, double lr, double momentum);
double grad_norm(const std::vector<ad::ParamPtr>& group);

struct TrainRunResult {
  int64_t final_step = 0;
  LossTerms first_step_terms;
  LossTerms final_step_terms;
  std::string checkpoint_dir;  // empty when out_dir was empty
  std::string log_path;
};

// Full optimization loop. out_dir empty -> in-memory only (no checkpoint or
// log files); otherwise writes train_log.jsonl + checkpoint_final/ (+
// checkpoint_step_* at the configured interval).
TrainRunResult run_training(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                            const std::string& out_dir);

}  // namespace persemon
