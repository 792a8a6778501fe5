#include "persemon/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace persemon {

namespace {
constexpr double kPi = 3.14159265358979323846;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Distinct sub-streams of one master seed.
enum SeedStream : uint64_t {
  kLatentStream = 1,
  kRenderStream = 2,
  kTraitNoiseStream = 3,
  kBatchEmotionStream = 4,
  kBatchVideoStream = 5,
  kSparseStream = 6,
};
}  // namespace

PlantedRelationship PlantedRelationship::defaults() {
  PlantedRelationship rel;
  // Rows: Extraversion, Agreeableness, Conscientiousness, Neuroticism,
  // Openness; columns: (arousal, valence).
  rel.m = {{{1.0, 1.2},
            {0.3, 1.5},
            {0.45, 1.45},
            {0.9, -1.3},
            {-0.9, 1.3}}};
  rel.b = {0.0, 0.0, 0.0, 0.0, 0.0};
  rel.noise_sigma = 0.0;
  return rel;
}

std::array<double, 5> PlantedRelationship::apply(double arousal, double valence) const {
  std::array<double, 5> out{};
  for (int t = 0; t < 5; ++t)
    out[static_cast<size_t>(t)] =
        sigmoid(m[static_cast<size_t>(t)][0] * arousal + m[static_cast<size_t>(t)][1] * valence +
                b[static_cast<size_t>(t)]);
  return out;
}

std::vector<SegmentRange> segment_partition(int frame_count, int k) {
  if (k < 1) throw ContractError("segment_partition needs k >= 1");
  if (frame_count < k)
    throw ContractError("segment_partition: " + std::to_string(frame_count) + " frames < k=" +
                        std::to_string(k));
  std::vector<SegmentRange> out;
  out.reserve(static_cast<size_t>(k));
  int base = frame_count / k, extra = frame_count % k, at = 0;
  for (int i = 0; i < k; ++i) {
    int len = base + (i < extra ? 1 : 0);
    out.push_back({at, at + len});
    at += len;
  }
  return out;
}

Tensor render_frame(double arousal, double valence, const ShiftParams& shift,
                    const RenderParams& rp, std::mt19937_64& noise_rng) {
  const int s = rp.image_size;
  Tensor img({1, s, s});
  const double half = (s - 1) / 2.0;
  // Horizontal center encodes valence, vertical center encodes arousal.
  const double cx = half + valence * half * rp.position_gain;
  const double cy = half + arousal * half * rp.position_gain;
  const double inv2s2 = 1.0 / (2.0 * rp.blob_sigma * rp.blob_sigma);
  std::normal_distribution<double> noise(0.0, rp.pixel_noise);
  double* px = img.data();
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double dx = x - cx, dy = y - cy;
      double v = rp.blob_amplitude * std::exp(-(dx * dx + dy * dy) * inv2s2);
      v += shift.brightness;
      if (shift.ring_amplitude != 0.0) {
        double rc = std::sqrt((x - half) * (x - half) + (y - half) * (y - half));
        v += shift.ring_amplitude * 0.5 * (1.0 + std::sin(2.0 * kPi * rc / shift.ring_period));
      }
      if (rp.pixel_noise > 0.0) v += noise(noise_rng);
      px[y * s + x] = clip01(v);
    }
  return img;
}

std::vector<SyntheticSample> gen_emotion_set(int n, uint64_t seed, const ShiftParams& shift,
                                             const RenderParams& rp) {
  if (n < 1) throw ContractError("gen_emotion_set needs n >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Per-sample rngs: the set is a pure function of (seed, index).
    std::mt19937_64 latent_rng(derive_seed(derive_seed(seed, kLatentStream), static_cast<uint64_t>(i)));
    std::mt19937_64 render_rng(derive_seed(derive_seed(seed, kRenderStream), static_cast<uint64_t>(i)));
    std::uniform_real_distribution<double> u(-rp.latent_range, rp.latent_range);
    SyntheticSample smp;
    smp.arousal = u(latent_rng);
    smp.valence = u(latent_rng);
    smp.tag = DatasetTag::kEmotion;
    smp.image = render_frame(smp.arousal, smp.valence, shift, rp, render_rng);
    out.push_back(std::move(smp));
  }
  return out;
}

std::vector<SyntheticVideo> gen_personality_set(int n_videos, int frames_per_video, int k_segments,
                                                uint64_t seed, const PlantedRelationship& rel,
                                                const ShiftParams& shift, const RenderParams& rp,
                                                double frame_jitter) {
  if (n_videos < 1) throw ContractError("gen_personality_set needs n_videos >= 1");
  if (frames_per_video < k_segments)
    throw ConfigError("frames_per_video=" + std::to_string(frames_per_video) +
                      " is smaller than k=" + std::to_string(k_segments));
  std::vector<SyntheticVideo> out;
  out.reserve(static_cast<size_t>(n_videos));
  for (int i = 0; i < n_videos; ++i) {
    std::mt19937_64 latent_rng(derive_seed(derive_seed(seed, kLatentStream), static_cast<uint64_t>(i)));
    std::mt19937_64 render_rng(derive_seed(derive_seed(seed, kRenderStream), static_cast<uint64_t>(i)));
    std::mt19937_64 trait_rng(derive_seed(derive_seed(seed, kTraitNoiseStream), static_cast<uint64_t>(i)));
    std::uniform_real_distribution<double> u(-rp.latent_range, rp.latent_range);
    SyntheticVideo video;
    video.latent_arousal = u(latent_rng);
    video.latent_valence = u(latent_rng);
    video.traits = rel.apply(video.latent_arousal, video.latent_valence);
    if (rel.noise_sigma > 0.0) {
      std::normal_distribution<double> tn(0.0, rel.noise_sigma);
      for (auto& t : video.traits) t = clip01(t + tn(trait_rng));
    }
    video.frames.reserve(static_cast<size_t>(frames_per_video));
    std::normal_distribution<double> jitter(0.0, frame_jitter);
    for (int f = 0; f < frames_per_video; ++f) {
      SyntheticSample frame;
      frame.arousal = video.latent_arousal + (frame_jitter > 0.0 ? jitter(render_rng) : 0.0);
      frame.valence = video.latent_valence + (frame_jitter > 0.0 ? jitter(render_rng) : 0.0);
      frame.tag = DatasetTag::kPersonality;
      frame.image = render_frame(frame.arousal, frame.valence, shift, rp, render_rng);
      video.frames.push_back(std::move(frame));
    }
    video.segments = segment_partition(frames_per_video, k_segments);
    out.push_back(std::move(video));
  }
  return out;
}

std::vector<int> sparse_sample_indices(const SyntheticVideo& video, uint64_t seed) {
  if (video.segments.empty()) throw ContractError("sparse_sample on video without segments");
  std::mt19937_64 rng(derive_seed(seed, kSparseStream));
  std::vector<int> out;
  out.reserve(video.segments.size());
  for (const SegmentRange& seg : video.segments) {
    std::uniform_int_distribution<int> pick(seg.begin, seg.end - 1);
    out.push_back(pick(rng));
  }
  return out;
}

std::vector<SyntheticSample> sparse_sample(const SyntheticVideo& video, uint64_t seed) {
  std::vector<SyntheticSample> out;
  for (int idx : sparse_sample_indices(video, seed))
    out.push_back(video.frames[static_cast<size_t>(idx)]);
  return out;
}

std::vector<int> midpoint_sample_indices(const SyntheticVideo& video) {
  if (video.segments.empty()) throw ContractError("midpoint_sample on video without segments");
  std::vector<int> out;
  out.reserve(video.segments.size());
  for (const SegmentRange& seg : video.segments) out.push_back((seg.begin + seg.end - 1) / 2);
  return out;
}

Tensor stack_images(const std::vector<const SyntheticSample*>& samples) {
  if (samples.empty()) throw ContractError("stack_images on empty sample list");
  const Tensor& first = samples[0]->image;
  int s = first.dim(1);
  Tensor out({static_cast<int>(samples.size()), 1, s, s});
  int64_t plane = first.numel();
  for (size_t i = 0; i < samples.size(); ++i) {
    check_shape(samples[i]->image.same_shape(first), "stack_images: inconsistent frame shapes");
    std::copy_n(samples[i]->image.data(), plane, out.data() + static_cast<int64_t>(i) * plane);
  }
  return out;
}

Tensor stack_labels(const std::vector<const SyntheticSample*>& samples) {
  if (samples.empty()) throw ContractError("stack_labels on empty sample list");
  Tensor out({static_cast<int>(samples.size()), 2});
  for (size_t i = 0; i < samples.size(); ++i) {
    out[static_cast<int64_t>(2 * i)] = samples[i]->arousal;
    out[static_cast<int64_t>(2 * i + 1)] = samples[i]->valence;
  }
  return out;
}

namespace {
// n distinct indices from [0, pool); order follows the draw sequence.
std::vector<int> draw_distinct(int pool, int n, std::mt19937_64& rng) {
  std::vector<int> all(static_cast<size_t>(pool));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, pool - 1);
    std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(pick(rng))]);
  }
  all.resize(static_cast<size_t>(n));
  return all;
}
}  // namespace

Batch make_batch(const std::vector<SyntheticSample>& emotion_pool,
                 const std::vector<SyntheticVideo>& video_pool, int n_emotion, int n_videos,
                 uint64_t seed) {
  if (n_emotion < 0 || n_videos < 0) throw ContractError("make_batch counts must be >= 0");
  if (n_emotion == 0 && n_videos == 0) throw ContractError("make_batch: empty batch requested");
  if (n_emotion > static_cast<int>(emotion_pool.size()))
    throw ConfigError("make_batch: emotion pool exhausted (" + std::to_string(n_emotion) + " > " +
                      std::to_string(emotion_pool.size()) + ")");
  if (n_videos > static_cast<int>(video_pool.size()))
    throw ConfigError("make_batch: video pool exhausted (" + std::to_string(n_videos) + " > " +
                      std::to_string(video_pool.size()) + ")");

  Batch batch;
  batch.n_emotion = n_emotion;
  batch.n_videos = n_videos;

  if (n_emotion > 0) {
    std::mt19937_64 rng(derive_seed(seed, kBatchEmotionStream));
    std::vector<const SyntheticSample*> chosen;
    for (int idx : draw_distinct(static_cast<int>(emotion_pool.size()), n_emotion, rng))
      chosen.push_back(&emotion_pool[static_cast<size_t>(idx)]);
    batch.emotion_images = stack_images(chosen);
    batch.emotion_labels = stack_labels(chosen);
  }

  if (n_videos > 0) {
    std::mt19937_64 rng(derive_seed(seed, kBatchVideoStream));
    std::vector<int> vids = draw_distinct(static_cast<int>(video_pool.size()), n_videos, rng);
    batch.k = static_cast<int>(video_pool[static_cast<size_t>(vids[0])].segments.size());
    std::vector<const SyntheticSample*> frames;
    batch.personality_traits = Tensor({n_videos, 5});
    for (int v = 0; v < n_videos; ++v) {
      const SyntheticVideo& video = video_pool[static_cast<size_t>(vids[static_cast<size_t>(v)])];
      if (static_cast<int>(video.segments.size()) != batch.k)
        throw ConfigError("make_batch: videos disagree on segment count");
      uint64_t video_seed = derive_seed(seed, 1000003ULL + static_cast<uint64_t>(v));
      for (int idx : sparse_sample_indices(video, video_seed))
        frames.push_back(&video.frames[static_cast<size_t>(idx)]);
      for (int t = 0; t < 5; ++t)
        batch.personality_traits[static_cast<int64_t>(v) * 5 + t] =
            video.traits[static_cast<size_t>(t)];
    }
    batch.personality_frames = stack_images(frames);
  }
  return batch;
}

}  // namespace persemon
