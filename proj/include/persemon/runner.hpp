#pragma once

#include <optional>
#include <string>
#include <vector>

#include "persemon/configkv.hpp"
#include "persemon/dataset_io.hpp"
#include "persemon/metrics.hpp"
#include "persemon/trainer.hpp"

namespace persemon {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitPartial = 4;

GenConfig parse_gen_config(KvReader& kv);
TrainConfig parse_train_config(KvReader& kv);

// Applies one `--ablate` token (e.g. "disable_coherence", "consensus_max").
void apply_ablation_token(TrainConfig& cfg, const std::string& token);

// Dataset copy with videos re-partitioned into k segments (k sweeps).
Dataset with_segment_count(const Dataset& data, int k);

// Subcommand bodies. Each writes exactly one manifest under out_dir and
// returns a process exit code instead of throwing.
int cmd_gen_data(const std::string& config_file, const std::string& out_dir,
                 std::optional<uint64_t> seed_override);
int cmd_train(const std::string& config_file, const std::string& data_dir,
              const std::string& out_dir, std::optional<uint64_t> seed_override,
              const std::string& resume_dir, const std::vector<std::string>& ablate_tokens);
int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::string& out_dir, const std::string& paths_csv, bool probe);
int cmd_ablate(const std::string& suite_config, const std::string& data_dir,
               const std::string& out_dir);
int cmd_grad_check(const std::string& config_file, const std::string& out_dir);
int cmd_export_features(const std::string& checkpoint_dir, const std::string& data_dir,
                        const std::string& out_dir, int max_per_set);

}  // namespace persemon
