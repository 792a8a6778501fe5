#include "persemon/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace persemon {

namespace fs = std::filesystem;
using nlohmann::json;
using ad::ParamPtr;

std::vector<int> TrainConfig::effective_decay_steps() const {
  if (!decay_steps.empty()) return decay_steps;
  return {static_cast<int>(static_cast<int64_t>(total_steps) * 4 / 7),
          static_cast<int>(static_cast<int64_t>(total_steps) * 6 / 7)};
}

LossOptions TrainConfig::loss_options() const {
  LossOptions opts;
  opts.weights = weights;
  opts.reduction = reduction;
  opts.consensus = ablation.consensus;
  opts.consensus_post_squash = ablation.consensus_post_squash;
  opts.ram_stop_gradient = ablation.ram_stop_gradient;
  return opts;
}

TermSelection TrainConfig::main_terms() const {
  TermSelection sel;
  sel.personality = !ablation.disable_personality;
  sel.emotion = !ablation.disable_emotion;
  sel.discriminator = false;  // handled by sub-update (a)
  sel.adversarial = !ablation.disable_coherence;
  sel.ram = !ablation.disable_ram;
  return sel;
}

bool TrainConfig::coherence_active() const {
  return !ablation.disable_coherence && weights.lambda3 != 0.0;
}

void TrainConfig::validate(const Dataset& data) const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
  if (ablation.disable_personality && ablation.disable_emotion)
    throw ConfigError("at least one task must stay enabled");
  std::vector<int> milestones = effective_decay_steps();
  for (size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] <= 0 || milestones[i] >= total_steps)
      throw ConfigError("decay step " + std::to_string(milestones[i]) +
                        " outside (0, total_steps)");
    if (i > 0 && milestones[i] <= milestones[i - 1])
      throw ConfigError("decay_steps must be strictly increasing");
  }
  bool needs_videos = !ablation.disable_personality || !ablation.disable_ram;
  bool needs_emotion = !ablation.disable_emotion;
  if (needs_videos && n_videos < 1)
    throw ConfigError("personality/ram training needs n_videos >= 1");
  if (needs_emotion && n_emotion < 1) throw ConfigError("emotion training needs n_emotion >= 1");
  if (coherence_active() && (n_videos < 1 || n_emotion < 1))
    throw ConfigError("coherence needs both dataset types in the batch; "
                      "set disable_coherence for single-task runs");
  if (n_emotion > static_cast<int>(data.emotion_train.size()))
    throw ConfigError("n_emotion exceeds emotion_train pool");
  if (n_videos > static_cast<int>(data.videos_train.size()))
    throw ConfigError("n_videos exceeds videos_train pool");
  if (n_videos > 0) {
    if (data.config.frames_per_video < k)
      throw ConfigError("k=" + std::to_string(k) + " exceeds frames_per_video=" +
                        std::to_string(data.config.frames_per_video));
    if (data.config.k_segments != k)
      throw ConfigError("config k=" + std::to_string(k) + " does not match dataset k_segments=" +
                        std::to_string(data.config.k_segments));
  }
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step >= cfg.total_steps)
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, total_steps)");
  double lr = cfg.lr0;
  for (int milestone : cfg.effective_decay_steps())
    if (milestone <= step) lr *= cfg.decay_factor;
  return lr;
}

TrainState TrainState::init(const TrainConfig& cfg) {
  return TrainState{Model(preset_config(cfg.preset), derive_seed(cfg.seed, 101)), 0};
}

Batch batch_for_step(const Dataset& data, const TrainConfig& cfg, int64_t step) {
  int n_emotion = cfg.ablation.disable_emotion && !cfg.coherence_active() ? 0 : cfg.n_emotion;
  int n_videos =
      (cfg.ablation.disable_personality && cfg.ablation.disable_ram && !cfg.coherence_active())
          ? 0
          : cfg.n_videos;
  uint64_t seed = derive_seed(derive_seed(cfg.seed, 7), static_cast<uint64_t>(step));
  return make_batch(data.emotion_train, data.videos_train, n_emotion, n_videos, seed);
}

void sgd_update(const std::vector<ParamPtr>& group, double lr, double momentum) {
  for (const ParamPtr& p : group) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      p->momentum[i] = momentum * p->momentum[i] + p->grad[i];
      p->value[i] -= lr * p->momentum[i];
    }
  }
}

double grad_norm(const std::vector<ParamPtr>& group) {
  double sq = 0.0;
  for (const ParamPtr& p : group)
    for (int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
  return std::sqrt(sq);
}

namespace {

json step_record_json(const StepRecord& r) {
  return json{{"step", r.step},
              {"lr", r.lr},
              {"loss_personality", r.terms.personality},
              {"loss_emotion", r.terms.emotion},
              {"loss_discriminator", r.terms.discriminator},
              {"loss_adversarial", r.terms.adversarial},
              {"loss_ram", r.terms.ram},
              {"loss_total", r.terms.weighted_total},
              {"gnorm_fem", r.gnorm_fem},
              {"gnorm_pam", r.gnorm_pam},
              {"gnorm_eam", r.gnorm_eam},
              {"gnorm_ram", r.gnorm_ram},
              {"gnorm_disc", r.gnorm_disc}};
}

[[noreturn]] void numeric_abort(const StepRecord& rec, const std::string& where) {
  json dump = step_record_json(rec);
  dump["aborted_in"] = where;
  throw NumericError("non-finite value during training: " + dump.dump());
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

StepRecord train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg) {
  const LossOptions opts = cfg.loss_options();
  StepRecord rec;
  rec.step = state.step;
  rec.lr = lr_at(static_cast<int>(state.step), cfg);
  const ModelParams& params = state.model.params();

  // (a) classifier update; backbone and heads frozen by construction.
  if (cfg.coherence_active()) {
    ad::zero_grad(params.disc_group());
    TermSelection disc_only;
    disc_only.personality = disc_only.emotion = disc_only.adversarial = disc_only.ram = false;
    disc_only.discriminator = true;
    TotalLossResult disc = total_loss(state.model, batch, opts, disc_only);
    rec.terms.discriminator = disc.terms.discriminator;
    if (!finite(disc.terms.discriminator)) numeric_abort(rec, "classifier loss");
    ad::backward(disc.value);
    rec.gnorm_disc = grad_norm(params.disc_group());
    if (!finite(rec.gnorm_disc)) numeric_abort(rec, "classifier gradients");
    sgd_update(params.disc_group(), rec.lr, cfg.momentum);
  }

  // (b) main update; classifier weights of this step's (a) enter as constants.
  std::vector<ParamPtr> main_group = params.main_group();
  ad::zero_grad(main_group);
  TotalLossResult main = total_loss(state.model, batch, opts, cfg.main_terms());
  rec.terms.personality = main.terms.personality;
  rec.terms.emotion = main.terms.emotion;
  rec.terms.adversarial = main.terms.adversarial;
  rec.terms.ram = main.terms.ram;
  rec.terms.weighted_total =
      main.terms.weighted_total + cfg.weights.lambda3 * rec.terms.discriminator;
  if (!finite(main.terms.weighted_total)) numeric_abort(rec, "main loss");
  ad::backward(main.value);
  rec.gnorm_fem = grad_norm(params.fem_group());
  rec.gnorm_pam = grad_norm(params.pam_group());
  rec.gnorm_eam = grad_norm(params.eam_group());
  rec.gnorm_ram = grad_norm(params.ram_group());
  if (!finite(rec.gnorm_fem) || !finite(rec.gnorm_pam) || !finite(rec.gnorm_eam) ||
      !finite(rec.gnorm_ram))
    numeric_abort(rec, "main gradients");
  sgd_update(main_group, rec.lr, cfg.momentum);

  state.step++;
  return rec;
}

TrainRunResult run_training(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                            const std::string& out_dir) {
  cfg.validate(data);
  if (state.step >= cfg.total_steps)
    throw ConfigError("resume step " + std::to_string(state.step) +
                      " is already >= total_steps");

  std::ofstream log;
  TrainRunResult result;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    result.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
    log.open(result.log_path, state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open training log: " + result.log_path);
  }

  bool first = true;
  while (state.step < cfg.total_steps) {
    Batch batch = batch_for_step(data, cfg, state.step);
    StepRecord rec = train_step(state, batch, cfg);
    if (first) {
      result.first_step_terms = rec.terms;
      first = false;
    }
    result.final_step_terms = rec.terms;
    if (log) log << step_record_json(rec).dump() << "\n";
    if (!out_dir.empty() && cfg.checkpoint_interval > 0 &&
        state.step % cfg.checkpoint_interval == 0 && state.step < cfg.total_steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "checkpoint_step_%06lld",
                    static_cast<long long>(state.step));
      save_checkpoint((fs::path(out_dir) / name).string(), state.model, state.step, cfg.seed,
                      cfg.save_momentum);
    }
  }
  result.final_step = state.step;
  if (!out_dir.empty()) {
    result.checkpoint_dir = (fs::path(out_dir) / "checkpoint_final").string();
    save_checkpoint(result.checkpoint_dir, state.model, state.step, cfg.seed, cfg.save_momentum);
  }
  return result;
}

}  // namespace persemon
