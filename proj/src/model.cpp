#include "persemon/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace persemon {

namespace fs = std::filesystem;
using nlohmann::json;
using ad::Param;
using ad::ParamPtr;
using ad::Value;

ArchitectureConfig ArchitectureConfig::full() {
  ArchitectureConfig a;
  a.preset = Preset::kFull;
  a.input_size = 96;
  a.conv_widths = {64, 128, 256, 512};
  a.residual_units = {1, 2, 4, 1};
  a.feature_dim = 512;
  a.ram_hidden = 128;
  return a;
}

ArchitectureConfig ArchitectureConfig::micro() {
  ArchitectureConfig a;
  a.preset = Preset::kMicro;
  a.input_size = 32;
  a.conv_widths = {8, 16, 32, 64};
  a.residual_units = {1, 1, 2, 1};
  a.feature_dim = 64;
  a.ram_hidden = 128;
  return a;
}

ArchitectureConfig preset_config(Preset p) {
  return p == Preset::kFull ? ArchitectureConfig::full() : ArchitectureConfig::micro();
}

int ArchitectureConfig::spatial_after_backbone() const {
  int s = input_size;
  for (int i = 0; i < 4; ++i) s = (s + 1) / 2;
  return s;
}

int ArchitectureConfig::flattened_dim() const {
  int s = spatial_after_backbone();
  return conv_widths[3] * s * s;
}

std::string preset_name(Preset p) { return p == Preset::kFull ? "full" : "micro"; }

Preset preset_from_name(const std::string& s) {
  if (s == "full") return Preset::kFull;
  if (s == "micro") return Preset::kMicro;
  throw ConfigError("unknown preset: " + s);
}

namespace {

ParamPtr make_conv_param(const std::string& name, int out_ch, int in_ch, int k,
                         std::mt19937_64& rng) {
  Tensor t({out_ch, in_ch, k, k});
  fill_gaussian(t, rng, 0.0, std::sqrt(2.0 / (in_ch * k * k)));
  return std::make_shared<Param>(name, std::move(t));
}

ParamPtr make_fc_weight(const std::string& name, int in_dim, int out_dim, std::mt19937_64& rng) {
  Tensor t({in_dim, out_dim});
  fill_gaussian(t, rng, 0.0, std::sqrt(2.0 / in_dim));
  return std::make_shared<Param>(name, std::move(t));
}

ParamPtr make_bias(const std::string& name, int dim) {
  return std::make_shared<Param>(name, Tensor({dim}));
}

ParamPtr make_slope(const std::string& name, int channels) {
  return std::make_shared<Param>(name, Tensor::full({channels}, 0.25));
}

void append(std::vector<ParamPtr>& dst, const std::vector<ParamPtr>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

std::vector<ParamPtr> ModelParams::fem_group() const {
  std::vector<ParamPtr> out;
  for (const auto& block : fem.blocks) {
    out.push_back(block.down_w);
    for (const auto& u : block.units) {
      out.push_back(u.conv1_w);
      out.push_back(u.act1_slope);
      out.push_back(u.conv2_w);
      out.push_back(u.act2_slope);
    }
  }
  out.push_back(fem.fc1_w);
  out.push_back(fem.fc1_b);
  return out;
}

std::vector<ParamPtr> ModelParams::pam_group() const { return {pam.w, pam.b}; }
std::vector<ParamPtr> ModelParams::eam_group() const { return {eam.w, eam.b}; }
std::vector<ParamPtr> ModelParams::ram_group() const {
  return {ram.fc4_w, ram.fc4_b, ram.fc5_w, ram.fc5_b};
}
std::vector<ParamPtr> ModelParams::disc_group() const { return {disc.w, disc.b}; }

std::vector<ParamPtr> ModelParams::main_group() const {
  std::vector<ParamPtr> out = fem_group();
  append(out, pam_group());
  append(out, eam_group());
  append(out, ram_group());
  return out;
}

std::vector<ParamPtr> ModelParams::all() const {
  std::vector<ParamPtr> out = main_group();
  append(out, disc_group());
  return out;
}

Model::Model(const ArchitectureConfig& arch, uint64_t init_seed) : arch_(arch) {
  std::mt19937_64 rng(derive_seed(init_seed, 0x4d4f44454cULL));
  int in_ch = 1;
  for (int b = 0; b < 4; ++b) {
    int width = arch.conv_widths[static_cast<size_t>(b)];
    std::string prefix = "fem.block" + std::to_string(b + 1);
    ConvBlockParams& block = params_.fem.blocks[static_cast<size_t>(b)];
    block.down_w = make_conv_param(prefix + ".down.w", width, in_ch, 3, rng);
    for (int u = 0; u < arch.residual_units[static_cast<size_t>(b)]; ++u) {
      std::string up = prefix + ".unit" + std::to_string(u);
      ResidualUnitParams rp;
      rp.conv1_w = make_conv_param(up + ".conv1.w", width, width, 3, rng);
      rp.act1_slope = make_slope(up + ".act1.slope", width);
      rp.conv2_w = make_conv_param(up + ".conv2.w", width, width, 3, rng);
      rp.act2_slope = make_slope(up + ".act2.slope", width);
      block.units.push_back(std::move(rp));
    }
    in_ch = width;
  }
  params_.fem.fc1_w = make_fc_weight("fem.fc1.w", arch.flattened_dim(), arch.feature_dim, rng);
  params_.fem.fc1_b = make_bias("fem.fc1.b", arch.feature_dim);
  params_.pam.w = make_fc_weight("pam.fc2.w", arch.feature_dim, 5, rng);
  params_.pam.b = make_bias("pam.fc2.b", 5);
  params_.eam.w = make_fc_weight("eam.fc3.w", arch.feature_dim, 2, rng);
  params_.eam.b = make_bias("eam.fc3.b", 2);
  params_.ram.fc4_w = make_fc_weight("ram.fc4.w", 2, arch.ram_hidden, rng);
  params_.ram.fc4_b = make_bias("ram.fc4.b", arch.ram_hidden);
  params_.ram.fc5_w = make_fc_weight("ram.fc5.w", arch.ram_hidden, 5, rng);
  params_.ram.fc5_b = make_bias("ram.fc5.b", 5);
  params_.disc.w = make_fc_weight("disc.fc6.w", arch.feature_dim, 2, rng);
  params_.disc.b = make_bias("disc.fc6.b", 2);
}

Model Model::clone() const {
  Model copy(arch_);
  auto dup = [](const ParamPtr& p) {
    auto q = std::make_shared<Param>(p->name, p->value);
    q->grad = p->grad;
    q->momentum = p->momentum;
    return q;
  };
  for (size_t b = 0; b < 4; ++b) {
    const ConvBlockParams& src = params_.fem.blocks[b];
    ConvBlockParams& dst = copy.params_.fem.blocks[b];
    dst.down_w = dup(src.down_w);
    for (const auto& u : src.units)
      dst.units.push_back({dup(u.conv1_w), dup(u.act1_slope), dup(u.conv2_w), dup(u.act2_slope)});
  }
  copy.params_.fem.fc1_w = dup(params_.fem.fc1_w);
  copy.params_.fem.fc1_b = dup(params_.fem.fc1_b);
  copy.params_.pam = {dup(params_.pam.w), dup(params_.pam.b)};
  copy.params_.eam = {dup(params_.eam.w), dup(params_.eam.b)};
  copy.params_.ram = {dup(params_.ram.fc4_w), dup(params_.ram.fc4_b), dup(params_.ram.fc5_w),
                      dup(params_.ram.fc5_b)};
  copy.params_.disc = {dup(params_.disc.w), dup(params_.disc.b)};
  return copy;
}

namespace {
Value bind(const ParamPtr& p, bool trainable) {
  return trainable ? ad::param(p) : ad::constant(p->value);
}
}  // namespace

Value Model::fem_forward_value(const Tensor& images, bool trainable) const {
  check_shape(images.rank() == 4 && images.dim(1) == 1,
              "fem_forward expects [N,1,S,S], got " + shape_str(images.shape()));
  check_shape(images.dim(2) == arch_.input_size && images.dim(3) == arch_.input_size,
              "fem_forward input size " + shape_str(images.shape()) + " does not match configured " +
                  std::to_string(arch_.input_size));
  Value h = ad::constant(images);
  for (const auto& block : params_.fem.blocks) {
    h = ad::conv2d(h, bind(block.down_w, trainable), 2);
    for (const auto& u : block.units)
      h = ad::residual_unit(h, bind(u.conv1_w, trainable), bind(u.act1_slope, trainable),
                            bind(u.conv2_w, trainable), bind(u.act2_slope, trainable));
  }
  return ad::fully_connected(ad::flatten_rows(h), bind(params_.fem.fc1_w, trainable),
                             bind(params_.fem.fc1_b, trainable));
}

Value Model::pam_frame_logits(const Value& features, bool trainable) const {
  return ad::fully_connected(features, bind(params_.pam.w, trainable),
                             bind(params_.pam.b, trainable));
}

Value Model::pam_video_traits(const Value& frame_logits, Consensus c, bool post_squash) const {
  if (frame_logits.tensor().numel() == 0 || frame_logits.tensor().dim(0) < 1)
    throw ContractError("pam_video_traits needs at least one frame");
  if (post_squash) return apply_consensus(ad::sigmoid(frame_logits), c);
  return ad::sigmoid(apply_consensus(frame_logits, c));
}

Value Model::eam_forward_value(const Value& features, bool trainable) const {
  return ad::tanh_act(ad::fully_connected(features, bind(params_.eam.w, trainable),
                                          bind(params_.eam.b, trainable)));
}

Value Model::ram_forward_value(const Value& frame_emotions, Consensus c, bool trainable,
                               bool stop_gradient_input) const {
  if (frame_emotions.tensor().dim(0) < 1) throw ContractError("ram_forward needs K >= 1 frames");
  Value input = stop_gradient_input ? ad::detach(frame_emotions) : frame_emotions;
  Value pooled = ad::reshape(apply_consensus(input, c), {1, 2});
  Value hidden = ad::relu(ad::fully_connected(pooled, bind(params_.ram.fc4_w, trainable),
                                              bind(params_.ram.fc4_b, trainable)));
  Value out = ad::sigmoid(ad::fully_connected(hidden, bind(params_.ram.fc5_w, trainable),
                                              bind(params_.ram.fc5_b, trainable)));
  return ad::reshape(out, {5});
}

Value Model::discriminator_logits(const Value& features, bool trainable) const {
  return ad::fully_connected(features, bind(params_.disc.w, trainable),
                             bind(params_.disc.b, trainable));
}

Value Model::discriminator_forward_value(const Value& features, bool trainable) const {
  return ad::softmax(discriminator_logits(features, trainable));
}

ad::Value apply_consensus(const Value& rows, Consensus c) {
  return c == Consensus::kAverage ? ad::mean_axis0(rows) : ad::max_axis0(rows);
}

std::array<double, 5> fuse_pam_ram(const std::array<double, 5>& pam_traits,
                                   const std::array<double, 5>& ram_traits, double w_pam,
                                   double w_ram) {
  if (w_pam <= 0.0 || w_ram <= 0.0)
    throw ContractError("fuse_pam_ram weights must be positive");
  std::array<double, 5> out{};
  for (size_t i = 0; i < 5; ++i)
    out[i] = (w_pam * pam_traits[i] + w_ram * ram_traits[i]) / (w_pam + w_ram);
  return out;
}

Tensor Model::fem_forward(const Tensor& images) const {
  return fem_forward_value(images, false).tensor();
}

Model::PamResult Model::pam_forward(const Tensor& features, Consensus c, bool post_squash) const {
  if (features.rank() != 2 || features.dim(0) < 1)
    throw ContractError("pam_forward needs [K,feature_dim] with K >= 1");
  Value logits = pam_frame_logits(ad::constant(features), false);
  Value traits = pam_video_traits(logits, c, post_squash);
  PamResult r;
  r.per_frame_logits = logits.tensor();
  for (size_t i = 0; i < 5; ++i) r.video_traits[i] = traits.tensor()[static_cast<int64_t>(i)];
  return r;
}

Tensor Model::eam_forward(const Tensor& features) const {
  return eam_forward_value(ad::constant(features), false).tensor();
}

std::array<double, 5> Model::ram_forward(const Tensor& frame_emotions, Consensus c) const {
  Value out = ram_forward_value(ad::constant(frame_emotions), c, false, false);
  std::array<double, 5> r{};
  for (size_t i = 0; i < 5; ++i) r[i] = out.tensor()[static_cast<int64_t>(i)];
  return r;
}

Tensor Model::discriminator_forward(const Tensor& features) const {
  return discriminator_forward_value(ad::constant(features), false).tensor();
}

// --- checkpoints ------------------------------------------------------------

namespace {

json arch_to_json(const ArchitectureConfig& a) {
  return json{{"preset", preset_name(a.preset)},
              {"input_size", a.input_size},
              {"conv_widths", a.conv_widths},
              {"residual_units", a.residual_units},
              {"feature_dim", a.feature_dim},
              {"ram_hidden", a.ram_hidden}};
}

ArchitectureConfig arch_from_json(const json& j) {
  ArchitectureConfig a;
  a.preset = preset_from_name(j.at("preset").get<std::string>());
  a.input_size = j.at("input_size").get<int>();
  for (size_t i = 0; i < 4; ++i) {
    a.conv_widths[i] = j.at("conv_widths").at(i).get<int>();
    a.residual_units[i] = j.at("residual_units").at(i).get<int>();
  }
  a.feature_dim = j.at("feature_dim").get<int>();
  a.ram_hidden = j.at("ram_hidden").get<int>();
  return a;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Model& model, int64_t step, uint64_t seed,
                     bool with_momentum) {
  fs::path root(dir);
  fs::create_directories(root / "params");
  if (with_momentum) fs::create_directories(root / "momentum");
  json names = json::array();
  for (const ParamPtr& p : model.params().all()) {
    names.push_back(p->name);
    write_tensor_file((root / "params" / (p->name + ".bin")).string(), p->value);
    if (with_momentum)
      write_tensor_file((root / "momentum" / (p->name + ".bin")).string(), p->momentum);
  }
  json manifest{{"format_version", 1},
                {"arch", arch_to_json(model.arch())},
                {"step", step},
                {"seed", seed},
                {"has_momentum", with_momentum},
                {"params", names}};
  std::ofstream f(root / "checkpoint.json");
  if (!f) throw IoError("cannot write checkpoint manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

LoadedModel load_checkpoint(const std::string& dir) {
  fs::path root(dir);
  std::ifstream f(root / "checkpoint.json");
  if (!f) throw IoError("no checkpoint manifest in " + dir);
  json manifest = json::parse(f);
  CheckpointInfo info;
  info.arch = arch_from_json(manifest.at("arch"));
  info.step = manifest.at("step").get<int64_t>();
  info.seed = manifest.at("seed").get<uint64_t>();
  info.has_momentum = manifest.at("has_momentum").get<bool>();

  Model model(info.arch, /*init_seed=*/0);
  for (const ParamPtr& p : model.params().all()) {
    Tensor t = read_tensor_file((root / "params" / (p->name + ".bin")).string());
    if (!t.same_shape(p->value))
      throw ConfigError("checkpoint tensor " + p->name + " has shape " + shape_str(t.shape()) +
                        ", architecture expects " + shape_str(p->value.shape()));
    p->value = std::move(t);
    if (info.has_momentum)
      p->momentum = read_tensor_file((root / "momentum" / (p->name + ".bin")).string());
  }
  return LoadedModel{std::move(model), info};
}

LoadedModel load_checkpoint(const std::string& dir, const ArchitectureConfig& expected) {
  LoadedModel lm = load_checkpoint(dir);
  if (!(lm.info.arch == expected))
    throw ConfigError("checkpoint architecture in " + dir +
                      " does not match the requested configuration");
  return lm;
}

}  // namespace persemon
