#include "persemon/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace persemon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum DataSeedStream : uint64_t {
  kEmotionTrain = 11,
  kEmotionEval = 12,
  kVideosTrain = 13,
  kVideosEval = 14,
};

json shift_to_json(const ShiftParams& s) {
  return json{{"brightness", s.brightness},
              {"ring_amplitude", s.ring_amplitude},
              {"ring_period", s.ring_period}};
}

ShiftParams shift_from_json(const json& j) {
  ShiftParams s;
  s.brightness = j.at("brightness").get<double>();
  s.ring_amplitude = j.at("ring_amplitude").get<double>();
  s.ring_period = j.at("ring_period").get<double>();
  return s;
}

json rel_to_json(const PlantedRelationship& r) {
  json m = json::array();
  for (const auto& row : r.m) m.push_back(json{row[0], row[1]});
  json b = json::array();
  for (double v : r.b) b.push_back(v);
  return json{{"m", m}, {"b", b}, {"noise_sigma", r.noise_sigma}};
}

PlantedRelationship rel_from_json(const json& j) {
  PlantedRelationship r;
  const json& m = j.at("m");
  for (size_t i = 0; i < 5; ++i) {
    r.m[i][0] = m.at(i).at(0).get<double>();
    r.m[i][1] = m.at(i).at(1).get<double>();
  }
  for (size_t i = 0; i < 5; ++i) r.b[i] = j.at("b").at(i).get<double>();
  r.noise_sigma = j.at("noise_sigma").get<double>();
  return r;
}

json render_to_json(const RenderParams& r) {
  return json{{"image_size", r.image_size},       {"blob_sigma", r.blob_sigma},
              {"blob_amplitude", r.blob_amplitude}, {"pixel_noise", r.pixel_noise},
              {"latent_range", r.latent_range},    {"position_gain", r.position_gain}};
}

RenderParams render_from_json(const json& j) {
  RenderParams r;
  r.image_size = j.at("image_size").get<int>();
  r.blob_sigma = j.at("blob_sigma").get<double>();
  r.blob_amplitude = j.at("blob_amplitude").get<double>();
  r.pixel_noise = j.at("pixel_noise").get<double>();
  r.latent_range = j.at("latent_range").get<double>();
  r.position_gain = j.at("position_gain").get<double>();
  return r;
}

json gen_config_to_json(const GenConfig& c) {
  return json{{"emotion_train", c.emotion_train},
              {"emotion_eval", c.emotion_eval},
              {"videos_train", c.videos_train},
              {"videos_eval", c.videos_eval},
              {"frames_per_video", c.frames_per_video},
              {"k_segments", c.k_segments},
              {"seed", c.seed},
              {"video_jitter", c.video_jitter},
              {"render", render_to_json(c.render)},
              {"emotion_shift", shift_to_json(c.emotion_shift)},
              {"personality_shift", shift_to_json(c.personality_shift)},
              {"relationship", rel_to_json(c.rel)}};
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  c.emotion_train = j.at("emotion_train").get<int>();
  c.emotion_eval = j.at("emotion_eval").get<int>();
  c.videos_train = j.at("videos_train").get<int>();
  c.videos_eval = j.at("videos_eval").get<int>();
  c.frames_per_video = j.at("frames_per_video").get<int>();
  c.k_segments = j.at("k_segments").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.video_jitter = j.at("video_jitter").get<double>();
  c.render = render_from_json(j.at("render"));
  c.emotion_shift = shift_from_json(j.at("emotion_shift"));
  c.personality_shift = shift_from_json(j.at("personality_shift"));
  c.rel = rel_from_json(j.at("relationship"));
  return c;
}

Tensor samples_to_images(const std::vector<SyntheticSample>& v) {
  std::vector<const SyntheticSample*> ptrs;
  for (const auto& s : v) ptrs.push_back(&s);
  return stack_images(ptrs);
}

Tensor samples_to_labels(const std::vector<SyntheticSample>& v) {
  std::vector<const SyntheticSample*> ptrs;
  for (const auto& s : v) ptrs.push_back(&s);
  return stack_labels(ptrs);
}

std::vector<SyntheticSample> samples_from_tensors(const Tensor& images, const Tensor& labels,
                                                  DatasetTag tag) {
  check_shape(images.rank() == 4 && images.dim(1) == 1, "dataset images must be [N,1,S,S]");
  check_shape(labels.rank() == 2 && labels.dim(1) == 2 && labels.dim(0) == images.dim(0),
              "dataset labels must be [N,2]");
  int n = images.dim(0), s = images.dim(2);
  int64_t plane = static_cast<int64_t>(s) * s;
  std::vector<SyntheticSample> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SyntheticSample& smp = out[static_cast<size_t>(i)];
    smp.image = Tensor({1, s, s});
    std::copy_n(images.data() + i * plane, plane, smp.image.data());
    smp.arousal = labels[static_cast<int64_t>(i) * 2];
    smp.valence = labels[static_cast<int64_t>(i) * 2 + 1];
    smp.tag = tag;
  }
  return out;
}

void write_video_set(const fs::path& dir, const std::string& name,
                     const std::vector<SyntheticVideo>& videos, json& files) {
  int v = static_cast<int>(videos.size());
  int l = static_cast<int>(videos[0].frames.size());
  int s = videos[0].frames[0].image.dim(1);
  Tensor frames({v, l, 1, s, s});
  Tensor traits({v, 5});
  Tensor latents({v, 2});
  Tensor frame_labels({v, l, 2});
  int64_t plane = static_cast<int64_t>(s) * s;
  for (int i = 0; i < v; ++i) {
    const SyntheticVideo& video = videos[static_cast<size_t>(i)];
    for (int f = 0; f < l; ++f) {
      const SyntheticSample& fr = video.frames[static_cast<size_t>(f)];
      std::copy_n(fr.image.data(), plane,
                  frames.data() + (static_cast<int64_t>(i) * l + f) * plane);
      frame_labels[(static_cast<int64_t>(i) * l + f) * 2] = fr.arousal;
      frame_labels[(static_cast<int64_t>(i) * l + f) * 2 + 1] = fr.valence;
    }
    for (int t = 0; t < 5; ++t) traits[static_cast<int64_t>(i) * 5 + t] = video.traits[static_cast<size_t>(t)];
    latents[static_cast<int64_t>(i) * 2] = video.latent_arousal;
    latents[static_cast<int64_t>(i) * 2 + 1] = video.latent_valence;
  }
  for (const auto& [suffix, tensor] :
       std::initializer_list<std::pair<std::string, const Tensor*>>{
           {"frames", &frames}, {"traits", &traits}, {"latents", &latents},
           {"frame_labels", &frame_labels}}) {
    std::string fname = name + "_" + suffix + ".bin";
    write_tensor_file((dir / fname).string(), *tensor);
    files[fname] = hex64(fnv1a_file((dir / fname).string()));
  }
}

std::vector<SyntheticVideo> read_video_set(const fs::path& dir, const std::string& name,
                                           int k_segments) {
  Tensor frames = read_tensor_file((dir / (name + "_frames.bin")).string());
  Tensor traits = read_tensor_file((dir / (name + "_traits.bin")).string());
  Tensor latents = read_tensor_file((dir / (name + "_latents.bin")).string());
  Tensor frame_labels = read_tensor_file((dir / (name + "_frame_labels.bin")).string());
  check_shape(frames.rank() == 5 && frames.dim(2) == 1, "video frames must be [V,L,1,S,S]");
  int v = frames.dim(0), l = frames.dim(1), s = frames.dim(3);
  check_shape(traits.rank() == 2 && traits.dim(0) == v && traits.dim(1) == 5,
              "video traits must be [V,5]");
  int64_t plane = static_cast<int64_t>(s) * s;
  std::vector<SyntheticVideo> out(static_cast<size_t>(v));
  for (int i = 0; i < v; ++i) {
    SyntheticVideo& video = out[static_cast<size_t>(i)];
    video.frames.resize(static_cast<size_t>(l));
    for (int f = 0; f < l; ++f) {
      SyntheticSample& fr = video.frames[static_cast<size_t>(f)];
      fr.image = Tensor({1, s, s});
      std::copy_n(frames.data() + (static_cast<int64_t>(i) * l + f) * plane, plane,
                  fr.image.data());
      fr.arousal = frame_labels[(static_cast<int64_t>(i) * l + f) * 2];
      fr.valence = frame_labels[(static_cast<int64_t>(i) * l + f) * 2 + 1];
      fr.tag = DatasetTag::kPersonality;
    }
    for (int t = 0; t < 5; ++t) video.traits[static_cast<size_t>(t)] = traits[static_cast<int64_t>(i) * 5 + t];
    video.latent_arousal = latents[static_cast<int64_t>(i) * 2];
    video.latent_valence = latents[static_cast<int64_t>(i) * 2 + 1];
    video.segments = segment_partition(l, k_segments);
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const GenConfig& cfg) {
  if (cfg.frames_per_video < cfg.k_segments)
    throw ConfigError("frames_per_video=" + std::to_string(cfg.frames_per_video) +
                      " is smaller than k_segments=" + std::to_string(cfg.k_segments));
  Dataset ds;
  ds.config = cfg;
  ds.emotion_train = gen_emotion_set(cfg.emotion_train, derive_seed(cfg.seed, kEmotionTrain),
                                     cfg.emotion_shift, cfg.render);
  ds.emotion_eval = gen_emotion_set(cfg.emotion_eval, derive_seed(cfg.seed, kEmotionEval),
                                    cfg.emotion_shift, cfg.render);
  ds.videos_train = gen_personality_set(cfg.videos_train, cfg.frames_per_video, cfg.k_segments,
                                        derive_seed(cfg.seed, kVideosTrain), cfg.rel,
                                        cfg.personality_shift, cfg.render, cfg.video_jitter);
  ds.videos_eval = gen_personality_set(cfg.videos_eval, cfg.frames_per_video, cfg.k_segments,
                                       derive_seed(cfg.seed, kVideosEval), cfg.rel,
                                       cfg.personality_shift, cfg.render, cfg.video_jitter);
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  fs::path root(dir);
  json files = json::object();

  const std::pair<std::string, const std::vector<SyntheticSample>*> sets[] = {
      {"emotion_train", &ds.emotion_train}, {"emotion_eval", &ds.emotion_eval}};
  for (const auto& [name, samples] : sets) {
    std::string img = name + "_images.bin", lbl = name + "_labels.bin";
    write_tensor_file((root / img).string(), samples_to_images(*samples));
    write_tensor_file((root / lbl).string(), samples_to_labels(*samples));
    files[img] = hex64(fnv1a_file((root / img).string()));
    files[lbl] = hex64(fnv1a_file((root / lbl).string()));
  }
  write_video_set(root, "videos_train", ds.videos_train, files);
  write_video_set(root, "videos_eval", ds.videos_eval, files);

  json manifest{{"format_version", 1},
                {"config", gen_config_to_json(ds.config)},
                {"files", files},
                {"counts",
                 {{"emotion_train", ds.emotion_train.size()},
                  {"emotion_eval", ds.emotion_eval.size()},
                  {"videos_train", ds.videos_train.size()},
                  {"videos_eval", ds.videos_eval.size()}}}};
  std::ofstream f(root / "manifest.json");
  if (!f) throw IoError("cannot write dataset manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  fs::path root(dir);
  std::ifstream f(root / "manifest.json");
  if (!f) throw IoError("no dataset manifest in " + dir);
  json manifest = json::parse(f);
  Dataset ds;
  ds.config = gen_config_from_json(manifest.at("config"));
  ds.emotion_train = samples_from_tensors(
      read_tensor_file((root / "emotion_train_images.bin").string()),
      read_tensor_file((root / "emotion_train_labels.bin").string()), DatasetTag::kEmotion);
  ds.emotion_eval = samples_from_tensors(
      read_tensor_file((root / "emotion_eval_images.bin").string()),
      read_tensor_file((root / "emotion_eval_labels.bin").string()), DatasetTag::kEmotion);
  ds.videos_train = read_video_set(root, "videos_train", ds.config.k_segments);
  ds.videos_eval = read_video_set(root, "videos_eval", ds.config.k_segments);
  return ds;
}

uint64_t dataset_manifest_hash(const std::string& dir) {
  return fnv1a_file((fs::path(dir) / "manifest.json").string());
}

}  // namespace persemon
