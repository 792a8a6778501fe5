#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "persemon/tensor.hpp"

namespace persemon {

enum class DatasetTag { kEmotion = 0, kPersonality = 1 };

// Per-dataset nuisance applied at render time. The emotion set gets a
// brightness offset plus a concentric ring texture so the two sets are
// separable from raw pixels; the personality set stays plain.
struct ShiftParams {
  double brightness = 0.0;
  double ring_amplitude = 0.0;
  double ring_period = 4.0;  // pixels between rings
};

// Ground-truth map from (arousal, valence) to the five trait labels:
//   traits = sigmoid(M.[arousal,valence] + b) + noise, clipped to [0,1].
struct PlantedRelationship {
  std::array<std::array<double, 2>, 5> m{};
  std::array<double, 5> b{};
  double noise_sigma = 0.0;

  // Agreeableness/Conscientiousness rows nearly parallel, Neuroticism row
  // exactly opposite Openness.
  static PlantedRelationship defaults();

  std::array<double, 5> apply(double arousal, double valence) const;  // noise-free
};

// Blob rendering knobs shared by both generators.
struct RenderParams {
  int image_size = 32;
  double blob_sigma = 3.0;      // pixels
  double blob_amplitude = 0.8;
  double pixel_noise = 0.02;    // gaussian, per pixel
  double latent_range = 0.8;    // labels drawn uniform over [-r, r]^2
  double position_gain = 0.8;   // fraction of half-image the label range maps onto
};

struct SyntheticSample {
  Tensor image;  // [1,S,S], values in [0,1]
  double arousal = 0.0;
  double valence = 0.0;
  DatasetTag tag = DatasetTag::kEmotion;
};

struct SegmentRange {
  int begin = 0;
  int end = 0;  // exclusive
};

struct SyntheticVideo {
  std::vector<SyntheticSample> frames;
  std::array<double, 5> traits{};
  double latent_arousal = 0.0;
  double latent_valence = 0.0;
  std::vector<SegmentRange> segments;  // contiguous, sizes differ by <= 1
};

// Near-equal contiguous partition of [0,frame_count) into k ranges.
std::vector<SegmentRange> segment_partition(int frame_count, int k);

// Renders one blob frame. Exposed for tests; generators call it.
Tensor render_frame(double arousal, double valence, const ShiftParams& shift,
                    const RenderParams& rp, std::mt19937_64& noise_rng);

// Frame-level labeled set standing in for an in-the-wild emotion corpus.
std::vector<SyntheticSample> gen_emotion_set(int n, uint64_t seed, const ShiftParams& shift,
                                             const RenderParams& rp);

// Video-level labeled set standing in for an apparent-personality corpus.
// Each video has one latent (arousal, valence); frames jitter around it and
// traits come from the planted relationship applied to the latent.
std::vector<SyntheticVideo> gen_personality_set(int n_videos, int frames_per_video, int k_segments,
                                                uint64_t seed, const PlantedRelationship& rel,
                                                const ShiftParams& shift, const RenderParams& rp,
                                                double frame_jitter);

// One uniformly random frame per segment, order preserved.
std::vector<int> sparse_sample_indices(const SyntheticVideo& video, uint64_t seed);
std::vector<SyntheticSample> sparse_sample(const SyntheticVideo& video, uint64_t seed);

// Mid-segment frame per segment; the deterministic choice used at eval time.
std::vector<int> midpoint_sample_indices(const SyntheticVideo& video);

// Mixed mini-batch: n_emotion frame samples plus n_videos * K personality
// frames grouped by video.
struct Batch {
  Tensor emotion_images;      // [n_emotion,1,S,S]; unset when n_emotion == 0
  Tensor emotion_labels;      // [n_emotion,2] (arousal, valence)
  Tensor personality_frames;  // [n_videos*k,1,S,S]; unset when n_videos == 0
  Tensor personality_traits;  // [n_videos,5]
  int n_emotion = 0;
  int n_videos = 0;
  int k = 0;

  bool has_emotion() const { return n_emotion > 0; }
  bool has_videos() const { return n_videos > 0; }
  int total_frames() const { return n_emotion + n_videos * k; }
};

Batch make_batch(const std::vector<SyntheticSample>& emotion_pool,
                 const std::vector<SyntheticVideo>& video_pool, int n_emotion, int n_videos,
                 uint64_t seed);

// Stacks samples into [N,1,S,S] images and [N,2] labels.
Tensor stack_images(const std::vector<const SyntheticSample*>& samples);
Tensor stack_labels(const std::vector<const SyntheticSample*>& samples);

}  // namespace persemon
