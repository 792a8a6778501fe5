#include "persemon/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "persemon/gradcheck.hpp"

#ifndef PERSEMON_BUILD_ID
#define PERSEMON_BUILD_ID "unknown"
#endif

namespace persemon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- manifests ----------------------------------------------------------

class ManifestWriter {
 public:
  ManifestWriter(std::string command, std::string out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["build"] = PERSEMON_BUILD_ID;
  }

  json& data() { return j_; }

  void finish(int exit_status) {
    auto elapsed = std::chrono::steady_clock::now() - start_;
    j_["wall_clock_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    j_["exit_status"] = exit_status;
    fs::create_directories(out_dir_);
    std::ofstream f(fs::path(out_dir_) / "manifest.json");
    if (f) f << j_.dump(2) << "\n";
  }

 private:
  json j_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
};

int code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const NumericError&) {
    return kExitNumeric;
  } catch (const std::exception&) {
    return kExitOther;
  }
}

std::string describe_current_exception() {
  try {
    throw;
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

json train_config_json(const TrainConfig& c) {
  return json{{"preset", preset_name(c.preset)},
              {"lr0", c.lr0},
              {"momentum", c.momentum},
              {"decay_factor", c.decay_factor},
              {"total_steps", c.total_steps},
              {"decay_steps", c.effective_decay_steps()},
              {"n_emotion", c.n_emotion},
              {"n_videos", c.n_videos},
              {"k", c.k},
              {"lambda1", c.weights.lambda1},
              {"lambda2", c.weights.lambda2},
              {"lambda3", c.weights.lambda3},
              {"lambda4", c.weights.lambda4},
              {"lambda5", c.weights.lambda5},
              {"margin_m", c.weights.margin},
              {"smooth_l1_variant",
               c.weights.variant == ad::SmoothL1Variant::kContinuous ? "continuous"
                                                                     : "paper_literal"},
              {"reduction", c.reduction == Reduction::kMean ? "mean" : "sum"},
              {"consensus", c.ablation.consensus == Consensus::kAverage ? "average" : "max"},
              {"consensus_post_squash", c.ablation.consensus_post_squash},
              {"disable_personality", c.ablation.disable_personality},
              {"disable_emotion", c.ablation.disable_emotion},
              {"disable_ram", c.ablation.disable_ram},
              {"disable_coherence", c.ablation.disable_coherence},
              {"ram_stop_gradient", c.ablation.ram_stop_gradient},
              {"seed", c.seed},
              {"checkpoint_interval", c.checkpoint_interval},
              {"save_momentum", c.save_momentum},
              {"batch_size", c.n_emotion + c.n_videos * c.k}};
}

}  // namespace

GenConfig parse_gen_config(KvReader& kv) {
  GenConfig c;
  c.render.image_size = kv.get_int("image_size", c.render.image_size);
  c.emotion_train = kv.get_int("emotion_train", c.emotion_train);
  c.emotion_eval = kv.get_int("emotion_eval", c.emotion_eval);
  c.videos_train = kv.get_int("videos_train", c.videos_train);
  c.videos_eval = kv.get_int("videos_eval", c.videos_eval);
  c.frames_per_video = kv.get_int("frames_per_video", c.frames_per_video);
  c.k_segments = kv.get_int("k_segments", c.k_segments);
  c.seed = kv.get_u64("seed", c.seed);
  c.render.latent_range = kv.get_double("latent_range", c.render.latent_range);
  c.render.blob_sigma = kv.get_double("blob_sigma", c.render.blob_sigma);
  c.render.blob_amplitude = kv.get_double("blob_amplitude", c.render.blob_amplitude);
  c.render.pixel_noise = kv.get_double("pixel_noise", c.render.pixel_noise);
  c.render.position_gain = kv.get_double("position_gain", c.render.position_gain);
  c.video_jitter = kv.get_double("video_jitter", c.video_jitter);
  c.emotion_shift.brightness = kv.get_double("emotion_brightness", c.emotion_shift.brightness);
  c.emotion_shift.ring_amplitude =
      kv.get_double("emotion_ring_amplitude", c.emotion_shift.ring_amplitude);
  c.emotion_shift.ring_period = kv.get_double("emotion_ring_period", c.emotion_shift.ring_period);
  c.personality_shift.brightness =
      kv.get_double("personality_brightness", c.personality_shift.brightness);
  c.personality_shift.ring_amplitude =
      kv.get_double("personality_ring_amplitude", c.personality_shift.ring_amplitude);
  c.personality_shift.ring_period =
      kv.get_double("personality_ring_period", c.personality_shift.ring_period);
  c.rel.noise_sigma = kv.get_double("relationship_noise", c.rel.noise_sigma);
  std::vector<double> m_default;
  for (const auto& row : c.rel.m) {
    m_default.push_back(row[0]);
    m_default.push_back(row[1]);
  }
  std::vector<double> m = kv.get_double_list("relationship_m", m_default);
  if (m.size() != 10) throw ConfigError("relationship_m needs exactly 10 values (5 rows x 2)");
  for (size_t t = 0; t < 5; ++t) {
    c.rel.m[t][0] = m[2 * t];
    c.rel.m[t][1] = m[2 * t + 1];
  }
  std::vector<double> b = kv.get_double_list(
      "relationship_b", std::vector<double>(c.rel.b.begin(), c.rel.b.end()));
  if (b.size() != 5) throw ConfigError("relationship_b needs exactly 5 values");
  for (size_t t = 0; t < 5; ++t) c.rel.b[t] = b[t];
  return c;
}

TrainConfig parse_train_config(KvReader& kv) {
  TrainConfig c;
  c.preset = preset_from_name(kv.get_string("preset", preset_name(c.preset)));
  c.lr0 = kv.get_double("lr0", c.lr0);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.decay_factor = kv.get_double("decay_factor", c.decay_factor);
  c.total_steps = kv.get_int("total_steps", c.total_steps);
  c.decay_steps = kv.get_int_list("decay_steps", c.decay_steps);
  c.n_emotion = kv.get_int("n_emotion", c.n_emotion);
  c.n_videos = kv.get_int("n_videos", c.n_videos);
  c.k = kv.get_int("k", c.k);
  c.weights.lambda1 = kv.get_double("lambda1", c.weights.lambda1);
  c.weights.lambda2 = kv.get_double("lambda2", c.weights.lambda2);
  c.weights.lambda3 = kv.get_double("lambda3", c.weights.lambda3);
  c.weights.lambda4 = kv.get_double("lambda4", c.weights.lambda4);
  c.weights.lambda5 = kv.get_double("lambda5", c.weights.lambda5);
  c.weights.margin = kv.get_double("margin_m", c.weights.margin);
  std::string variant = kv.get_string("smooth_l1_variant", "continuous");
  if (variant == "continuous")
    c.weights.variant = ad::SmoothL1Variant::kContinuous;
  else if (variant == "paper_literal")
    c.weights.variant = ad::SmoothL1Variant::kPaperLiteral;
  else
    throw ConfigError("smooth_l1_variant must be continuous or paper_literal, got " + variant);
  std::string reduction = kv.get_string("reduction", "mean");
  if (reduction == "mean")
    c.reduction = Reduction::kMean;
  else if (reduction == "sum")
    c.reduction = Reduction::kSum;
  else
    throw ConfigError("reduction must be mean or sum, got " + reduction);
  std::string consensus = kv.get_string("consensus", "average");
  if (consensus == "average")
    c.ablation.consensus = Consensus::kAverage;
  else if (consensus == "max")
    c.ablation.consensus = Consensus::kMax;
  else
    throw ConfigError("consensus must be average or max, got " + consensus);
  c.ablation.consensus_post_squash =
      kv.get_bool("consensus_post_squash", c.ablation.consensus_post_squash);
  c.ablation.disable_personality =
      kv.get_bool("disable_personality", c.ablation.disable_personality);
  c.ablation.disable_emotion = kv.get_bool("disable_emotion", c.ablation.disable_emotion);
  c.ablation.disable_ram = kv.get_bool("disable_ram", c.ablation.disable_ram);
  c.ablation.disable_coherence = kv.get_bool("disable_coherence", c.ablation.disable_coherence);
  c.ablation.ram_stop_gradient = kv.get_bool("ram_stop_gradient", c.ablation.ram_stop_gradient);
  c.seed = kv.get_u64("seed", c.seed);
  c.checkpoint_interval = kv.get_int("checkpoint_interval", c.checkpoint_interval);
  c.save_momentum = kv.get_bool("save_momentum", c.save_momentum);
  return c;
}

void apply_ablation_token(TrainConfig& cfg, const std::string& token) {
  if (token == "disable_personality")
    cfg.ablation.disable_personality = true;
  else if (token == "disable_emotion")
    cfg.ablation.disable_emotion = true;
  else if (token == "disable_ram")
    cfg.ablation.disable_ram = true;
  else if (token == "disable_coherence")
    cfg.ablation.disable_coherence = true;
  else if (token == "ram_stop_gradient")
    cfg.ablation.ram_stop_gradient = true;
  else if (token == "consensus_max")
    cfg.ablation.consensus = Consensus::kMax;
  else if (token == "consensus_post_squash")
    cfg.ablation.consensus_post_squash = true;
  else
    throw ConfigError("unknown ablation token: " + token);
}

Dataset with_segment_count(const Dataset& data, int k) {
  Dataset copy = data;
  copy.config.k_segments = k;
  for (auto* videos : {&copy.videos_train, &copy.videos_eval})
    for (SyntheticVideo& v : *videos)
      v.segments = segment_partition(static_cast<int>(v.frames.size()), k);
  return copy;
}

// --- gen-data -------------------------------------------------------------

int cmd_gen_data(const std::string& config_file, const std::string& out_dir,
                 std::optional<uint64_t> seed_override) {
  ManifestWriter manifest("gen-data", out_dir);
  try {
    KvReader kv(config_file.empty() ? KvMap{} : parse_kv_file(config_file),
                config_file.empty() ? "<defaults>" : config_file);
    GenConfig cfg = parse_gen_config(kv);
    kv.finish();
    if (seed_override) cfg.seed = *seed_override;

    Dataset ds = generate_dataset(cfg);
    save_dataset(out_dir, ds);
    manifest.data()["config_file"] = config_file;
    manifest.data()["out_dir"] = out_dir;
    manifest.data()["seed"] = cfg.seed;
    manifest.data()["dataset_manifest_fnv1a"] = hex64(dataset_manifest_hash(out_dir));
    manifest.finish(kExitOk);
    return kExitOk;
  } catch (...) {
    std::cerr << "gen-data: " << describe_current_exception() << "\n";
    int code = code_for_current_exception();
    manifest.finish(code);
    return code;
  }
}

// --- train ----------------------------------------------------------------

int cmd_train(const std::string& config_file, const std::string& data_dir,
              const std::string& out_dir, std::optional<uint64_t> seed_override,
              const std::string& resume_dir, const std::vector<std::string>& ablate_tokens) {
  ManifestWriter manifest("train", out_dir);
  try {
    KvReader kv(config_file.empty() ? KvMap{} : parse_kv_file(config_file),
                config_file.empty() ? "<defaults>" : config_file);
    TrainConfig cfg = parse_train_config(kv);
    kv.finish();
    if (seed_override) cfg.seed = *seed_override;
    for (const std::string& token : ablate_tokens) apply_ablation_token(cfg, token);

    Dataset data = load_dataset(data_dir);
    manifest.data()["config"] = train_config_json(cfg);
    manifest.data()["data_dir"] = data_dir;
    manifest.data()["out_dir"] = out_dir;
    manifest.data()["dataset_manifest_fnv1a"] = hex64(dataset_manifest_hash(data_dir));

    TrainState state = TrainState::init(cfg);
    if (!resume_dir.empty()) {
      LoadedModel lm = load_checkpoint(resume_dir, preset_config(cfg.preset));
      state.model = std::move(lm.model);
      state.step = lm.info.step;
      manifest.data()["resumed_from"] = resume_dir;
      manifest.data()["resume_step"] = lm.info.step;
    }

    TrainRunResult result = run_training(state, data, cfg, out_dir);
    manifest.data()["final_step"] = result.final_step;
    manifest.data()["checkpoint_dir"] = result.checkpoint_dir;
    manifest.data()["log_path"] = result.log_path;
    manifest.data()["first_total_loss"] = result.first_step_terms.weighted_total;
    manifest.data()["final_total_loss"] = result.final_step_terms.weighted_total;
    manifest.finish(kExitOk);
    return kExitOk;
  } catch (...) {
    std::cerr << "train: " << describe_current_exception() << "\n";
    int code = code_for_current_exception();
    if (code == kExitNumeric) {
      fs::create_directories(out_dir);
      std::ofstream diag(fs::path(out_dir) / "numeric_abort.json");
      if (diag) diag << json{{"error", describe_current_exception()}}.dump(2) << "\n";
      manifest.data()["diagnostic"] = (fs::path(out_dir) / "numeric_abort.json").string();
    }
    manifest.finish(code);
    return code;
  }
}

// --- eval -----------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::string& out_dir, const std::string& paths_csv, bool probe) {
  ManifestWriter manifest("eval", out_dir);
  try {
    LoadedModel lm = load_checkpoint(checkpoint_dir);
    Dataset data = load_dataset(data_dir);
    if (data.config.render.image_size != lm.info.arch.input_size)
      throw ConfigError("architecture mismatch: checkpoint expects input " +
                        std::to_string(lm.info.arch.input_size) + ", dataset images are " +
                        std::to_string(data.config.render.image_size));

    EvalOptions opts;
    opts.pam = opts.ram = opts.fused = opts.emotion = false;
    std::istringstream is(paths_csv);
    std::string path;
    while (std::getline(is, path, ',')) {
      if (path == "pam")
        opts.pam = true;
      else if (path == "ram")
        opts.ram = true;
      else if (path == "fused")
        opts.fused = true;
      else if (path == "emotion")
        opts.emotion = true;
      else if (!path.empty())
        throw ConfigError("unknown eval path: " + path + " (expected pam,ram,fused,emotion)");
    }
    if (!opts.pam && !opts.ram && !opts.fused && !opts.emotion)
      throw ConfigError("no eval paths selected");
    opts.probe = probe;

    EvalReport report = evaluate_model(lm.model, data, opts);
    fs::create_directories(out_dir);
    std::string json_text = eval_report_json(report);
    std::ofstream f(fs::path(out_dir) / "eval.json");
    if (!f) throw IoError("cannot write eval.json");
    f << json_text << "\n";
    std::cout << eval_report_table(report);

    manifest.data()["checkpoint_dir"] = checkpoint_dir;
    manifest.data()["data_dir"] = data_dir;
    manifest.data()["paths"] = paths_csv;
    manifest.data()["dataset_manifest_fnv1a"] = hex64(dataset_manifest_hash(data_dir));
    manifest.data()["report"] = json::parse(json_text);
    manifest.finish(kExitOk);
    return kExitOk;
  } catch (...) {
    std::cerr << "eval: " << describe_current_exception() << "\n";
    int code = code_for_current_exception();
    manifest.finish(code);
    return code;
  }
}

// --- ablate -----------------------------------------------------------------

namespace {

struct AblationVariant {
  std::string name;
  int k_override = 0;  // 0: use base k
  void (*tweak)(TrainConfig&) = nullptr;
};

struct MemberOutcome {
  std::string variant;
  int seed_index = 0;
  uint64_t train_seed = 0;
  bool ok = false;
  std::string error;
  double emotion_mse = 0.0, pam_mse = 0.0, ram_mse = 0.0, fused_mse = 0.0;
  double pam_a = 0.0, probe_accuracy = 0.0;
  int batch_size = 0;
  int total_steps = 0;
};

std::vector<AblationVariant> suite_variants(const std::string& suite,
                                            const std::vector<int>& sweep_k) {
  if (suite == "joint_training")
    return {
        {"emotion_only", 0,
         [](TrainConfig& c) {
           c.ablation.disable_personality = true;
           c.ablation.disable_ram = true;
           c.ablation.disable_coherence = true;
           c.n_videos = 0;
         }},
        {"personality_only", 0,
         [](TrainConfig& c) {
           c.ablation.disable_emotion = true;
           c.ablation.disable_ram = true;
           c.ablation.disable_coherence = true;
           c.n_emotion = 0;
         }},
        {"joint_no_ram", 0, [](TrainConfig& c) { c.ablation.disable_ram = true; }},
        {"joint_full", 0, nullptr},
    };
  if (suite == "coherence")
    return {
        {"with_coherence", 0, nullptr},
        {"without_coherence", 0, [](TrainConfig& c) { c.ablation.disable_coherence = true; }},
    };
  if (suite == "consensus")
    return {
        {"average", 0, nullptr},
        {"max", 0, [](TrainConfig& c) { c.ablation.consensus = Consensus::kMax; }},
    };
  if (suite == "k_sweep") {
    std::vector<AblationVariant> out;
    for (int k : sweep_k) out.push_back({"k" + std::to_string(k), k, nullptr});
    return out;
  }
  throw ConfigError("unknown ablation suite: " + suite +
                    " (expected joint_training, coherence, consensus, k_sweep)");
}

MemberOutcome run_member(const Dataset& base_data, const TrainConfig& base_cfg,
                         const AblationVariant& variant, int seed_index,
                         const std::string& member_dir) {
  MemberOutcome out;
  out.variant = variant.name;
  out.seed_index = seed_index;
  try {
    TrainConfig cfg = base_cfg;
    cfg.seed = base_cfg.seed + static_cast<uint64_t>(seed_index);
    if (variant.tweak) variant.tweak(cfg);
    if (variant.k_override > 0) cfg.k = variant.k_override;
    out.train_seed = cfg.seed;
    out.batch_size = cfg.n_emotion + cfg.n_videos * cfg.k;
    out.total_steps = cfg.total_steps;

    const Dataset* data = &base_data;
    Dataset resegmented;
    if (variant.k_override > 0 && variant.k_override != base_data.config.k_segments) {
      resegmented = with_segment_count(base_data, variant.k_override);
      data = &resegmented;
    }

    TrainState state = TrainState::init(cfg);
    run_training(state, *data, cfg, member_dir);

    // Member manifest: flags + seeds, so pairings can be audited.
    {
      json m{{"command", "ablate-member"},
             {"variant", variant.name},
             {"seed_index", seed_index},
             {"config", train_config_json(cfg)}};
      std::ofstream f(fs::path(member_dir) / "manifest.json");
      if (f) f << m.dump(2) << "\n";
    }

    EvalOptions eopts;
    eopts.consensus = cfg.ablation.consensus;
    eopts.consensus_post_squash = cfg.ablation.consensus_post_squash;
    eopts.pam = eopts.ram = eopts.fused = !cfg.ablation.disable_personality;
    eopts.ram = eopts.ram && !cfg.ablation.disable_ram;
    eopts.fused = eopts.fused && !cfg.ablation.disable_ram;
    eopts.emotion = !cfg.ablation.disable_emotion;
    eopts.probe = true;
    EvalReport report = evaluate_model(state.model, *data, eopts);
    if (report.emotion) out.emotion_mse = report.emotion->mse_avg;
    if (report.pam) out.pam_mse = report.pam->mse_avg;
    if (report.pam) out.pam_a = report.pam->a_avg;
    if (report.ram) out.ram_mse = report.ram->mse_avg;
    if (report.fused) out.fused_mse = report.fused->mse_avg;
    if (report.probe_accuracy) out.probe_accuracy = *report.probe_accuracy;
    std::ofstream f(fs::path(member_dir) / "eval.json");
    if (f) f << eval_report_json(report) << "\n";
    out.ok = true;
  } catch (...) {
    out.error = describe_current_exception();
  }
  return out;
}

}  // namespace

int cmd_ablate(const std::string& suite_config, const std::string& data_dir,
               const std::string& out_dir) {
  ManifestWriter manifest("ablate", out_dir);
  try {
    KvReader kv(parse_kv_file(suite_config), suite_config);
    std::string suite = kv.get_string("suite", "");
    int seeds = kv.get_int("seeds", 5);
    std::vector<int> sweep_k = kv.get_int_list("sweep_k", {5, 10, 20});
    TrainConfig base = parse_train_config(kv);
    kv.finish();
    if (suite.empty()) throw ConfigError("suite config must set `suite`");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");

    Dataset data = load_dataset(data_dir);
    std::vector<AblationVariant> variants = suite_variants(suite, sweep_k);

    struct Job {
      const AblationVariant* variant;
      int seed_index;
    };
    std::vector<Job> jobs;
    for (const AblationVariant& v : variants)
      for (int s = 0; s < seeds; ++s) jobs.push_back({&v, s});

    std::vector<MemberOutcome> outcomes(jobs.size());
    std::mutex next_mutex;
    size_t next = 0;
    unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(), 4u));
    auto worker = [&]() {
      for (;;) {
        size_t idx;
        {
          std::lock_guard<std::mutex> lock(next_mutex);
          if (next >= jobs.size()) return;
          idx = next++;
        }
        const Job& job = jobs[idx];
        std::string member_dir =
            (fs::path(out_dir) / (job.variant->name + "_s" + std::to_string(job.seed_index)))
                .string();
        outcomes[idx] = run_member(data, base, *job.variant, job.seed_index, member_dir);
      }
    };
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    // results.csv: one row per (variant, seed).
    fs::create_directories(out_dir);
    {
      std::ofstream csv(fs::path(out_dir) / "results.csv");
      if (!csv) throw IoError("cannot write results.csv");
      csv << "variant,seed_index,train_seed,status,emotion_mse,pam_mse,ram_mse,fused_mse,"
             "pam_A,probe_accuracy,batch_size,total_steps\n";
      csv.precision(12);
      for (const MemberOutcome& o : outcomes)
        csv << o.variant << "," << o.seed_index << "," << o.train_seed << ","
            << (o.ok ? "ok" : "failed") << "," << o.emotion_mse << "," << o.pam_mse << ","
            << o.ram_mse << "," << o.fused_mse << "," << o.pam_a << "," << o.probe_accuracy << ","
            << o.batch_size << "," << o.total_steps << "\n";
    }

    // Paired-difference summary vs the suite's first variant.
    json rows = json::array();
    for (const MemberOutcome& o : outcomes)
      rows.push_back(json{{"variant", o.variant},
                          {"seed_index", o.seed_index},
                          {"train_seed", o.train_seed},
                          {"ok", o.ok},
                          {"error", o.error},
                          {"emotion_mse", o.emotion_mse},
                          {"pam_mse", o.pam_mse},
                          {"ram_mse", o.ram_mse},
                          {"fused_mse", o.fused_mse},
                          {"pam_A", o.pam_a},
                          {"probe_accuracy", o.probe_accuracy},
                          {"batch_size", o.batch_size},
                          {"total_steps", o.total_steps}});

    auto mean_metric = [&outcomes, seeds](const std::string& variant, auto getter,
                                          bool* ok_all) -> double {
      double acc = 0.0;
      int n = 0;
      for (const MemberOutcome& o : outcomes)
        if (o.variant == variant) {
          if (!o.ok) *ok_all = false;
          acc += getter(o);
          ++n;
        }
      return n ? acc / n : 0.0;
    };
    json summary = json::array();
    const std::string baseline = variants.front().name;
    for (const AblationVariant& v : variants) {
      bool ok_all = true;
      json entry{{"variant", v.name}};
      entry["mean_emotion_mse"] =
          mean_metric(v.name, [](const MemberOutcome& o) { return o.emotion_mse; }, &ok_all);
      entry["mean_pam_mse"] =
          mean_metric(v.name, [](const MemberOutcome& o) { return o.pam_mse; }, &ok_all);
      entry["mean_ram_mse"] =
          mean_metric(v.name, [](const MemberOutcome& o) { return o.ram_mse; }, &ok_all);
      entry["mean_fused_mse"] =
          mean_metric(v.name, [](const MemberOutcome& o) { return o.fused_mse; }, &ok_all);
      entry["mean_pam_A"] =
          mean_metric(v.name, [](const MemberOutcome& o) { return o.pam_a; }, &ok_all);
      entry["mean_probe_accuracy"] =
          mean_metric(v.name, [](const MemberOutcome& o) { return o.probe_accuracy; }, &ok_all);
      entry["all_ok"] = ok_all;
      if (v.name != baseline) {
        bool dummy = true;
        entry["paired_diff_vs_" + baseline] = json{
            {"emotion_mse",
             entry["mean_emotion_mse"].get<double>() -
                 mean_metric(baseline, [](const MemberOutcome& o) { return o.emotion_mse; },
                             &dummy)},
            {"pam_mse", entry["mean_pam_mse"].get<double>() -
                            mean_metric(baseline,
                                        [](const MemberOutcome& o) { return o.pam_mse; }, &dummy)},
            {"probe_accuracy",
             entry["mean_probe_accuracy"].get<double>() -
                 mean_metric(baseline, [](const MemberOutcome& o) { return o.probe_accuracy; },
                             &dummy)}};
      }
      summary.push_back(entry);
    }
    {
      std::ofstream jf(fs::path(out_dir) / "results.json");
      if (!jf) throw IoError("cannot write results.json");
      jf << json{{"suite", suite}, {"rows", rows}, {"summary", summary}}.dump(2) << "\n";
    }

    bool any_failed = false;
    for (const MemberOutcome& o : outcomes) any_failed = any_failed || !o.ok;
    manifest.data()["suite"] = suite;
    manifest.data()["seeds"] = seeds;
    manifest.data()["data_dir"] = data_dir;
    manifest.data()["dataset_manifest_fnv1a"] = hex64(dataset_manifest_hash(data_dir));
    manifest.data()["config"] = train_config_json(base);
    manifest.data()["members"] = jobs.size();
    int code = any_failed ? kExitPartial : kExitOk;
    manifest.finish(code);
    if (any_failed) std::cerr << "ablate: some members failed; partial results preserved\n";
    return code;
  } catch (...) {
    std::cerr << "ablate: " << describe_current_exception() << "\n";
    int code = code_for_current_exception();
    manifest.finish(code);
    return code;
  }
}

// --- grad-check -------------------------------------------------------------

int cmd_grad_check(const std::string& config_file, const std::string& out_dir) {
  ManifestWriter manifest("grad-check", out_dir);
  try {
    KvReader kv(config_file.empty() ? KvMap{} : parse_kv_file(config_file),
                config_file.empty() ? "<defaults>" : config_file);
    TrainConfig cfg = parse_train_config(kv);
    int n_emotion = kv.get_int("gradcheck_n_emotion", 4);
    int n_videos = kv.get_int("gradcheck_n_videos", 2);
    int k = kv.get_int("gradcheck_k", 3);
    int coords = kv.get_int("gradcheck_coords_per_tensor", 12);
    double tol = kv.get_double("gradcheck_rel_tol", 1e-3);
    kv.finish();
    if (cfg.preset != Preset::kMicro)
      throw ConfigError("grad-check runs on the micro preset only");

    GenConfig gen;
    gen.seed = cfg.seed;
    gen.emotion_train = std::max(8, n_emotion);
    gen.emotion_eval = 4;
    gen.videos_train = std::max(4, n_videos);
    gen.videos_eval = 2;
    gen.frames_per_video = std::max(4, k);
    gen.k_segments = k;
    Dataset data = generate_dataset(gen);
    Batch batch = make_batch(data.emotion_train, data.videos_train, n_emotion, n_videos,
                             derive_seed(cfg.seed, 99));

    Model model(preset_config(cfg.preset), derive_seed(cfg.seed, 101));
    LossOptions opts = cfg.loss_options();

    const std::pair<std::string, std::vector<ad::ParamPtr>> groups[] = {
        {"fem", model.params().fem_group()},   {"pam", model.params().pam_group()},
        {"eam", model.params().eam_group()},   {"ram", model.params().ram_group()},
        {"discriminator", model.params().disc_group()},
    };
    GradCheckOptions gopts;
    gopts.rel_tol = tol;
    gopts.max_coords_per_tensor = coords;
    gopts.seed = cfg.seed;

    auto build = [&]() { return total_loss(model, batch, opts).value; };
    bool all_pass = true;
    json group_report = json::array();
    for (const auto& [name, params] : groups) {
      GradCheckReport rep = check_gradients(build, params, gopts);
      all_pass = all_pass && rep.pass;
      std::cout << (rep.pass ? "[PASS] " : "[FAIL] ") << name
                << " max_rel_err=" << rep.max_rel_err << "\n";
      group_report.push_back(
          json{{"group", name}, {"pass", rep.pass}, {"max_rel_err", rep.max_rel_err}});
    }
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "gradcheck.json");
    if (f) f << json{{"groups", group_report}, {"pass", all_pass}}.dump(2) << "\n";
    manifest.data()["config_file"] = config_file;
    manifest.data()["pass"] = all_pass;
    int code = all_pass ? kExitOk : kExitOther;
    manifest.finish(code);
    return code;
  } catch (...) {
    std::cerr << "grad-check: " << describe_current_exception() << "\n";
    int code = code_for_current_exception();
    manifest.finish(code);
    return code;
  }
}

// --- export-features ----------------------------------------------------

int cmd_export_features(const std::string& checkpoint_dir, const std::string& data_dir,
                        const std::string& out_dir, int max_per_set) {
  ManifestWriter manifest("export-features", out_dir);
  try {
    LoadedModel lm = load_checkpoint(checkpoint_dir);
    Dataset data = load_dataset(data_dir);
    if (data.config.render.image_size != lm.info.arch.input_size)
      throw ConfigError("architecture mismatch between checkpoint and dataset");
    std::vector<ProjectionRow> rows = export_projection(lm.model, data, max_per_set);
    fs::create_directories(out_dir);
    std::string csv = (fs::path(out_dir) / "projection.csv").string();
    write_projection_csv(csv, rows);
    manifest.data()["checkpoint_dir"] = checkpoint_dir;
    manifest.data()["data_dir"] = data_dir;
    manifest.data()["rows"] = rows.size();
    manifest.data()["csv"] = csv;
    manifest.data()["dataset_manifest_fnv1a"] = hex64(dataset_manifest_hash(data_dir));
    manifest.finish(kExitOk);
    return kExitOk;
  } catch (...) {
    std::cerr << "export-features: " << describe_current_exception() << "\n";
    int code = code_for_current_exception();
    manifest.finish(code);
    return code;
  }
}

}  // namespace persemon
