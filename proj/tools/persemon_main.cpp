#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "persemon/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"persemon: joint apparent-personality / emotion training on synthetic data"};
  app.require_subcommand(1);

  std::string config, data_dir, out_dir, checkpoint, resume, paths = "pam,ram,fused,emotion";
  std::optional<uint64_t> seed;
  std::vector<std::string> ablate_tokens;
  bool no_probe = false;
  int max_per_set = 300;

  auto add_seed = [&seed](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the config seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset pair");
  gen->add_option("--config", config, "flat key=value config file");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  add_seed(gen);

  CLI::App* train = app.add_subcommand("train", "train from a dataset directory");
  train->add_option("--config", config, "flat key=value config file");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_option("--resume", resume, "checkpoint directory to resume from");
  train->add_option("--ablate", ablate_tokens,
                    "ablation switches (disable_coherence, consensus_max, ...)");
  add_seed(train);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--paths", paths, "comma list of pam,ram,fused,emotion");
  eval->add_flag("--no-probe", no_probe, "skip the linear dataset probe");

  CLI::App* ablate = app.add_subcommand("ablate", "run a paired-seed ablation suite");
  ablate->add_option("--config", config, "suite config file")->required();
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--out", out_dir, "suite output directory")->required();

  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference check per parameter group");
  grad->add_option("--config", config, "flat key=value config file");
  grad->add_option("--out", out_dir, "output directory");

  CLI::App* exportf = app.add_subcommand("export-features", "2-d feature projection CSV");
  exportf->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  exportf->add_option("--data", data_dir, "dataset directory")->required();
  exportf->add_option("--out", out_dir, "output directory")->required();
  exportf->add_option("--max-per-set", max_per_set, "cap on frames per dataset (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : persemon::kExitConfig;
  }

  if (gen->parsed()) return persemon::cmd_gen_data(config, out_dir, seed);
  if (train->parsed())
    return persemon::cmd_train(config, data_dir, out_dir, seed, resume, ablate_tokens);
  if (eval->parsed()) return persemon::cmd_eval(checkpoint, data_dir, out_dir, paths, !no_probe);
  if (ablate->parsed()) return persemon::cmd_ablate(config, data_dir, out_dir);
  if (grad->parsed())
    return persemon::cmd_grad_check(config, out_dir.empty() ? "gradcheck_out" : out_dir);
  if (exportf->parsed())
    return persemon::cmd_export_features(checkpoint, data_dir, out_dir, max_per_set);
  return persemon::kExitOther;
}
