#pragma once

#include <string>

#include "persemon/synthetic.hpp"

namespace persemon {

// Everything needed to regenerate a dataset pair from scratch. Serialized
// verbatim into the dataset manifest.
struct GenConfig {
  int emotion_train = 1500;
  int emotion_eval = 400;
  int videos_train = 60;
  int videos_eval = 30;
  int frames_per_video = 12;
  int k_segments = 10;
  uint64_t seed = 1;
  double video_jitter = 0.05;
  RenderParams render;
  ShiftParams emotion_shift{0.15, 0.12, 4.0};
  ShiftParams personality_shift{0.0, 0.0, 4.0};
  PlantedRelationship rel = PlantedRelationship::defaults();
};

struct Dataset {
  GenConfig config;
  std::vector<SyntheticSample> emotion_train;
  std::vector<SyntheticSample> emotion_eval;
  std::vector<SyntheticVideo> videos_train;
  std::vector<SyntheticVideo> videos_eval;
};

Dataset generate_dataset(const GenConfig& cfg);

// Directory layout: manifest.json plus flat tensor files (see README).
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

// FNV-1a of the manifest file; training manifests pin their input data by it.
uint64_t dataset_manifest_hash(const std::string& dir);

}  // namespace persemon
