#pragma once

#include <array>
#include <string>
#include <vector>

#include "persemon/autodiff.hpp"

namespace persemon {

enum class Preset { kFull, kMicro };
enum class Consensus { kAverage, kMax };

struct ArchitectureConfig {
  Preset preset = Preset::kMicro;
  int input_size = 32;
  std::array<int, 4> conv_widths{8, 16, 32, 64};
  std::array<int, 4> residual_units{1, 1, 2, 1};
  int feature_dim = 64;
  int ram_hidden = 128;

  static ArchitectureConfig full();
  static ArchitectureConfig micro();

  int spatial_after_backbone() const;  // input halved by each of the 4 blocks
  int flattened_dim() const;           // conv_widths[3] * spatial^2

  bool operator==(const ArchitectureConfig&) const = default;
};

ArchitectureConfig preset_config(Preset p);

// Parameter layout. The backbone (fem) is one physical set of tensors,
// referenced by every path that consumes features.
struct ResidualUnitParams {
  ad::ParamPtr conv1_w, act1_slope, conv2_w, act2_slope;
};
struct ConvBlockParams {
  ad::ParamPtr down_w;  // stride-2 conv
  std::vector<ResidualUnitParams> units;
};
struct FemParams {
  std::array<ConvBlockParams, 4> blocks;
  ad::ParamPtr fc1_w, fc1_b;
};
struct HeadParams {
  ad::ParamPtr w, b;
};
struct RamParams {
  ad::ParamPtr fc4_w, fc4_b, fc5_w, fc5_b;
};

struct ModelParams {
  FemParams fem;
  HeadParams pam;   // FC2 -> 5
  HeadParams eam;   // FC3 -> 2
  RamParams ram;    // FC4 -> hidden, FC5 -> 5
  HeadParams disc;  // FC6 -> 2

  std::vector<ad::ParamPtr> fem_group() const;
  std::vector<ad::ParamPtr> pam_group() const;
  std::vector<ad::ParamPtr> eam_group() const;
  std::vector<ad::ParamPtr> ram_group() const;
  std::vector<ad::ParamPtr> disc_group() const;
  std::vector<ad::ParamPtr> main_group() const;  // fem+pam+eam+ram
  std::vector<ad::ParamPtr> all() const;
};

// Segmental consensus over per-frame rows [K,M] -> [M].
ad::Value apply_consensus(const ad::Value& rows, Consensus c);

// Weighted late fusion of the two personality predictions.
std::array<double, 5> fuse_pam_ram(const std::array<double, 5>& pam_traits,
                                   const std::array<double, 5>& ram_traits, double w_pam,
                                   double w_ram);

class Model {
 public:
  Model(const ArchitectureConfig& arch, uint64_t init_seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model clone() const;  // deep copy (independent parameter storage)

  const ArchitectureConfig& arch() const { return arch_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  // --- graph builders ----------------------------------------------------
  // `trainable` binds parameters as gradient leaves; otherwise they enter
  // the graph as constants (used for frozen-group passes and inference).
  ad::Value fem_forward_value(const Tensor& images, bool trainable) const;
  ad::Value pam_frame_logits(const ad::Value& features, bool trainable) const;   // [N,5]
  ad::Value pam_video_traits(const ad::Value& frame_logits, Consensus c,
                             bool post_squash) const;                            // [K,5] -> [5]
  ad::Value eam_forward_value(const ad::Value& features, bool trainable) const;  // [N,2] tanh
  ad::Value ram_forward_value(const ad::Value& frame_emotions, Consensus c, bool trainable,
                              bool stop_gradient_input) const;                   // [K,2] -> [5]
  ad::Value discriminator_logits(const ad::Value& features, bool trainable) const;
  ad::Value discriminator_forward_value(const ad::Value& features, bool trainable) const;

  // --- plain inference ---------------------------------------------------
  Tensor fem_forward(const Tensor& images) const;  // [N,feature_dim]
  struct PamResult {
    std::array<double, 5> video_traits;  // in (0,1)
    Tensor per_frame_logits;             // [K,5]
  };
  PamResult pam_forward(const Tensor& features, Consensus c = Consensus::kAverage,
                        bool post_squash = false) const;
  Tensor eam_forward(const Tensor& features) const;  // [N,2] in (-1,1)
  std::array<double, 5> ram_forward(const Tensor& frame_emotions,
                                    Consensus c = Consensus::kAverage) const;
  Tensor discriminator_forward(const Tensor& features) const;  // [N,2] softmax rows

 private:
  Model(const ArchitectureConfig& arch) : arch_(arch) {}
  ArchitectureConfig arch_;
  ModelParams params_;
};

// --- checkpoints ----------------------------------------------------------
struct CheckpointInfo {
  ArchitectureConfig arch;
  int64_t step = 0;
  uint64_t seed = 0;
  bool has_momentum = false;
};

void save_checkpoint(const std::string& dir, const Model& model, int64_t step, uint64_t seed,
                     bool with_momentum);

struct LoadedModel {
  Model model;
  CheckpointInfo info;
};
LoadedModel load_checkpoint(const std::string& dir);
// Hard error when the stored architecture differs from `expected`.
LoadedModel load_checkpoint(const std::string& dir, const ArchitectureConfig& expected);

std::string preset_name(Preset p);
Preset preset_from_name(const std::string& s);

}  // namespace persemon
