#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "persemon/dataset_io.hpp"
#include "persemon/metrics.hpp"
#include "persemon/synthetic.hpp"

using namespace persemon;

namespace {

// Test-only ridge regression oracle (normal equations + Cholesky), used to
// check that the blob images linearly encode their labels.
struct RidgeDecoder {
  std::vector<double> weights;  // [d+1] per target
  int d = 0;

  static std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, int n) {
    // Cholesky a = L L^T, then forward/back substitution.
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        double s = a[static_cast<size_t>(i) * n + j];
        for (int k = 0; k < j; ++k)
          s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
        if (i == j)
          a[static_cast<size_t>(i) * n + j] = std::sqrt(s);
        else
          a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
      }
    }
    for (int i = 0; i < n; ++i) {
      double s = b[static_cast<size_t>(i)];
      for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k)];
      b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
      double s = b[static_cast<size_t>(i)];
      for (int k = i + 1; k < n; ++k)
        s -= a[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k)];
      b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
    }
    return b;
  }

  void fit(const std::vector<const SyntheticSample*>& samples, bool target_arousal,
           double ridge = 1e-3) {
    d = static_cast<int>(samples[0]->image.numel());
    int n = d + 1;
    std::vector<double> xtx(static_cast<size_t>(n) * n, 0.0), xty(static_cast<size_t>(n), 0.0);
    for (const SyntheticSample* s : samples) {
      const double* px = s->image.data();
      double y = target_arousal ? s->arousal : s->valence;
      for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) xtx[static_cast<size_t>(i) * n + j] += px[i] * px[j];
        xtx[static_cast<size_t>(i) * n + d] += px[i];
        xty[static_cast<size_t>(i)] += px[i] * y;
      }
      xtx[static_cast<size_t>(d) * n + d] += 1.0;
      xty[static_cast<size_t>(d)] += y;
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < i; ++j) xtx[static_cast<size_t>(i) * n + j] = xtx[static_cast<size_t>(j) * n + i];
      xtx[static_cast<size_t>(i) * n + i] += ridge;
    }
    weights = solve_spd(std::move(xtx), std::move(xty), n);
  }

  double predict(const SyntheticSample& s) const {
    const double* px = s.image.data();
    double acc = weights[static_cast<size_t>(d)];
    for (int i = 0; i < d; ++i) acc += weights[static_cast<size_t>(i)] * px[i];
    return acc;
  }
};

RenderParams quiet_render() {
  RenderParams rp;
  rp.pixel_noise = 0.0;
  return rp;
}

}  // namespace

TEST(SegmentPartition, CoversDisjointNearEqual) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> kd(1, 12);
    int k = kd(rng);
    std::uniform_int_distribution<int> ld(k, 60);
    int l = ld(rng);
    auto segs = segment_partition(l, k);
    ASSERT_EQ(static_cast<int>(segs.size()), k);
    int at = 0, min_len = l, max_len = 0;
    for (const SegmentRange& s : segs) {
      EXPECT_EQ(s.begin, at);  // contiguous, disjoint, ordered
      EXPECT_LT(s.begin, s.end);
      min_len = std::min(min_len, s.end - s.begin);
      max_len = std::max(max_len, s.end - s.begin);
      at = s.end;
    }
    EXPECT_EQ(at, l);  // union covers [0, L)
    EXPECT_LE(max_len - min_len, 1);
  }
  EXPECT_THROW(segment_partition(3, 5), ContractError);
}

TEST(EmotionSet, DeterministicPerSeed) {
  ShiftParams shift{0.15, 0.12, 4.0};
  RenderParams rp;
  auto a = gen_emotion_set(10, 42, shift, rp);
  auto b = gen_emotion_set(10, 42, shift, rp);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].arousal, b[i].arousal);
    EXPECT_EQ(a[i].valence, b[i].valence);
    for (int64_t p = 0; p < a[i].image.numel(); ++p) EXPECT_EQ(a[i].image[p], b[i].image[p]);
  }
  auto c = gen_emotion_set(10, 43, shift, rp);
  bool any_diff = false;
  for (int64_t p = 0; p < a[0].image.numel(); ++p) any_diff |= a[0].image[p] != c[0].image[p];
  EXPECT_TRUE(any_diff);
}

TEST(EmotionSet, NeutralSampleIsCentered) {
  RenderParams rp = quiet_render();
  std::mt19937_64 rng(1);
  Tensor img = render_frame(0.0, 0.0, ShiftParams{}, rp, rng);
  // Intensity centroid within one pixel of the image center.
  double sx = 0.0, sy = 0.0, mass = 0.0;
  int s = rp.image_size;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double v = img[y * s + x];
      sx += v * x;
      sy += v * y;
      mass += v;
    }
  double center = (s - 1) / 2.0;
  EXPECT_NEAR(sx / mass, center, 1.0);
  EXPECT_NEAR(sy / mass, center, 1.0);
}

TEST(EmotionSet, LabelsInRangeAndImagesIn01) {
  ShiftParams shift{0.15, 0.12, 4.0};
  RenderParams rp;
  auto set = gen_emotion_set(50, 7, shift, rp);
  for (const auto& s : set) {
    EXPECT_GE(s.arousal, -1.0);
    EXPECT_LE(s.arousal, 1.0);
    EXPECT_GE(s.valence, -1.0);
    EXPECT_LE(s.valence, 1.0);
    for (int64_t p = 0; p < s.image.numel(); ++p) {
      EXPECT_GE(s.image[p], 0.0);
      EXPECT_LE(s.image[p], 1.0);
    }
  }
}

TEST(EmotionSet, LinearDecoderRecoversLabels) {
  ShiftParams shift{0.15, 0.12, 4.0};
  RenderParams rp;  // default pixel noise
  auto train = gen_emotion_set(1000, 11, shift, rp);
  auto held_out = gen_emotion_set(300, 12, shift, rp);
  std::vector<const SyntheticSample*> train_ptrs;
  for (const auto& s : train) train_ptrs.push_back(&s);

  for (bool target_arousal : {true, false}) {
    RidgeDecoder dec;
    dec.fit(train_ptrs, target_arousal);
    std::vector<double> labels, preds;
    for (const auto& s : held_out) {
      labels.push_back(target_arousal ? s.arousal : s.valence);
      preds.push_back(dec.predict(s));
    }
    auto r2 = r_squared(labels, preds);
    ASSERT_TRUE(r2.has_value());
    EXPECT_GT(*r2, 0.9) << (target_arousal ? "arousal" : "valence");
  }
}

TEST(PersonalitySet, ZeroNoiseZeroJitterIsConstantPerVideo) {
  PlantedRelationship rel = PlantedRelationship::defaults();
  rel.noise_sigma = 0.0;
  RenderParams rp = quiet_render();
  auto videos = gen_personality_set(5, 8, 4, 3, rel, ShiftParams{}, rp, /*frame_jitter=*/0.0);
  for (const auto& v : videos) {
    for (size_t f = 1; f < v.frames.size(); ++f)
      for (int64_t p = 0; p < v.frames[0].image.numel(); ++p)
        EXPECT_EQ(v.frames[f].image[p], v.frames[0].image[p]);
    std::array<double, 5> expect = rel.apply(v.latent_arousal, v.latent_valence);
    for (size_t t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(v.traits[t], expect[t]);
  }
}

TEST(PersonalitySet, ZeroMapGivesNeutralTraits) {
  PlantedRelationship rel;  // m = 0, b = 0
  auto videos = gen_personality_set(4, 6, 3, 5, rel, ShiftParams{}, quiet_render(), 0.0);
  for (const auto& v : videos)
    for (double t : v.traits) EXPECT_DOUBLE_EQ(t, 0.5);
}

TEST(PersonalitySet, CorrelationSignsMatchPlantedMap) {
  PlantedRelationship rel = PlantedRelationship::defaults();
  auto videos = gen_personality_set(500, 4, 2, 21, rel, ShiftParams{}, quiet_render(), 0.0);
  for (int t = 0; t < 5; ++t) {
    for (int axis = 0; axis < 2; ++axis) {
      double mx = 0, my = 0;
      for (const auto& v : videos) {
        mx += axis == 0 ? v.latent_arousal : v.latent_valence;
        my += v.traits[static_cast<size_t>(t)];
      }
      mx /= videos.size();
      my /= videos.size();
      double cov = 0;
      for (const auto& v : videos) {
        double x = (axis == 0 ? v.latent_arousal : v.latent_valence) - mx;
        cov += x * (v.traits[static_cast<size_t>(t)] - my);
      }
      double expected_sign = rel.m[static_cast<size_t>(t)][static_cast<size_t>(axis)];
      EXPECT_GT(cov * expected_sign, 0.0) << "trait " << t << " axis " << axis;
    }
  }
}

TEST(PersonalitySet, TraitsClippedTo01) {
  PlantedRelationship rel = PlantedRelationship::defaults();
  rel.noise_sigma = 0.4;
  auto videos = gen_personality_set(100, 4, 2, 31, rel, ShiftParams{}, quiet_render(), 0.0);
  for (const auto& v : videos)
    for (double t : v.traits) {
      EXPECT_GE(t, 0.0);
      EXPECT_LE(t, 1.0);
    }
}

TEST(SparseSample, SingletonSegmentsReturnAllFramesInOrder) {
  auto videos = gen_personality_set(1, 6, 6, 41, PlantedRelationship::defaults(), ShiftParams{},
                                    quiet_render(), 0.0);
  std::vector<int> idx = sparse_sample_indices(videos[0], 9);
  ASSERT_EQ(idx.size(), 6u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(idx[static_cast<size_t>(i)], i);
}

TEST(SparseSample, IndicesStayInTheirSegments) {
  auto videos = gen_personality_set(1, 20, 10, 43, PlantedRelationship::defaults(), ShiftParams{},
                                    quiet_render(), 0.0);
  const SyntheticVideo& v = videos[0];
  for (uint64_t seed = 0; seed < 50; ++seed) {
    std::vector<int> idx = sparse_sample_indices(v, seed);
    ASSERT_EQ(idx.size(), 10u);
    for (size_t s = 0; s < 10; ++s) {
      EXPECT_GE(idx[s], v.segments[s].begin);
      EXPECT_LT(idx[s], v.segments[s].end);
    }
  }
}

TEST(SparseSample, UniformWithinSegments) {
  auto videos = gen_personality_set(1, 20, 10, 47, PlantedRelationship::defaults(), ShiftParams{},
                                    quiet_render(), 0.0);
  const SyntheticVideo& v = videos[0];
  int draws = 10000;
  std::vector<int> first_count(10, 0);
  for (int it = 0; it < draws; ++it) {
    std::vector<int> idx = sparse_sample_indices(v, static_cast<uint64_t>(it));
    for (size_t s = 0; s < 10; ++s)
      if (idx[s] == v.segments[s].begin) first_count[s]++;
  }
  for (int s = 0; s < 10; ++s)
    EXPECT_NEAR(first_count[static_cast<size_t>(s)] / static_cast<double>(draws), 0.5, 0.02);
}

TEST(MidpointSample, Deterministic) {
  auto videos = gen_personality_set(1, 10, 5, 51, PlantedRelationship::defaults(), ShiftParams{},
                                    quiet_render(), 0.0);
  std::vector<int> a = midpoint_sample_indices(videos[0]);
  std::vector<int> b = midpoint_sample_indices(videos[0]);
  EXPECT_EQ(a, b);
  for (size_t s = 0; s < a.size(); ++s) {
    EXPECT_GE(a[s], videos[0].segments[s].begin);
    EXPECT_LT(a[s], videos[0].segments[s].end);
  }
}

TEST(MakeBatch, PaperCompositionIs200) {
  ShiftParams shift{0.15, 0.12, 4.0};
  RenderParams rp;
  auto emotion = gen_emotion_set(120, 61, shift, rp);
  auto videos = gen_personality_set(12, 20, 10, 62, PlantedRelationship::defaults(),
                                    ShiftParams{}, rp, 0.05);
  Batch batch = make_batch(emotion, videos, 100, 10, 77);
  EXPECT_EQ(batch.total_frames(), 200);
  EXPECT_EQ(batch.emotion_images.dim(0), 100);
  EXPECT_EQ(batch.personality_frames.dim(0), 100);
  EXPECT_EQ(batch.personality_traits.dim(0), 10);
  EXPECT_EQ(batch.k, 10);
}

TEST(MakeBatch, EmotionOnlyAndDeterminism) {
  ShiftParams shift{0.15, 0.12, 4.0};
  RenderParams rp;
  auto emotion = gen_emotion_set(30, 63, shift, rp);
  auto videos = gen_personality_set(4, 6, 3, 64, PlantedRelationship::defaults(), ShiftParams{},
                                    rp, 0.05);
  Batch only = make_batch(emotion, videos, 8, 0, 5);
  EXPECT_TRUE(only.has_emotion());
  EXPECT_FALSE(only.has_videos());
  EXPECT_EQ(only.total_frames(), 8);

  Batch a = make_batch(emotion, videos, 8, 2, 9);
  Batch b = make_batch(emotion, videos, 8, 2, 9);
  for (int64_t i = 0; i < a.emotion_images.numel(); ++i)
    EXPECT_EQ(a.emotion_images[i], b.emotion_images[i]);
  for (int64_t i = 0; i < a.personality_frames.numel(); ++i)
    EXPECT_EQ(a.personality_frames[i], b.personality_frames[i]);

  EXPECT_THROW(make_batch(emotion, videos, 31, 0, 1), ConfigError);  // pool exhaustion
  EXPECT_THROW(make_batch(emotion, videos, 0, 5, 1), ConfigError);
}

TEST(DatasetShift, RawPixelsAreLinearlySeparable) {
  GenConfig cfg;
  cfg.emotion_train = 400;
  cfg.emotion_eval = 100;
  cfg.videos_train = 40;
  cfg.videos_eval = 10;
  cfg.frames_per_video = 10;
  cfg.k_segments = 5;
  cfg.seed = 71;
  Dataset ds = generate_dataset(cfg);

  auto pixels = [](const std::vector<const SyntheticSample*>& samples) {
    int d = static_cast<int>(samples[0]->image.numel());
    Tensor x({static_cast<int>(samples.size()), d});
    for (size_t i = 0; i < samples.size(); ++i)
      std::copy_n(samples[i]->image.data(), d, x.data() + static_cast<int64_t>(i) * d);
    return x;
  };
  std::vector<const SyntheticSample*> train, test;
  std::vector<int> ytr, yte;
  for (int i = 0; i < 300; ++i) {
    train.push_back(&ds.emotion_train[static_cast<size_t>(i)]);
    ytr.push_back(0);
    train.push_back(&ds.videos_train[static_cast<size_t>(i % 40)]
                         .frames[static_cast<size_t>((i / 40) % 10)]);
    ytr.push_back(1);
  }
  for (int i = 0; i < 100; ++i) {
    test.push_back(&ds.emotion_eval[static_cast<size_t>(i)]);
    yte.push_back(0);
    test.push_back(&ds.videos_eval[static_cast<size_t>(i % 10)]
                        .frames[static_cast<size_t>(i % 10)]);
    yte.push_back(1);
  }
  LinearProbe probe;
  probe.fit(pixels(train), ytr, 300);
  EXPECT_GT(probe.accuracy(pixels(test), yte), 0.9);
}

TEST(DatasetIo, RoundTripIsExact) {
  GenConfig cfg;
  cfg.emotion_train = 12;
  cfg.emotion_eval = 6;
  cfg.videos_train = 3;
  cfg.videos_eval = 2;
  cfg.frames_per_video = 5;
  cfg.k_segments = 5;
  cfg.seed = 81;
  Dataset ds = generate_dataset(cfg);
  std::string dir = testing::TempDir() + "/persemon_ds";
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir);

  ASSERT_EQ(back.emotion_train.size(), ds.emotion_train.size());
  for (size_t i = 0; i < ds.emotion_train.size(); ++i) {
    EXPECT_EQ(back.emotion_train[i].arousal, ds.emotion_train[i].arousal);
    EXPECT_EQ(back.emotion_train[i].valence, ds.emotion_train[i].valence);
    for (int64_t p = 0; p < ds.emotion_train[i].image.numel(); ++p)
      EXPECT_EQ(back.emotion_train[i].image[p], ds.emotion_train[i].image[p]);
  }
  ASSERT_EQ(back.videos_train.size(), ds.videos_train.size());
  for (size_t v = 0; v < ds.videos_train.size(); ++v) {
    EXPECT_EQ(back.videos_train[v].latent_arousal, ds.videos_train[v].latent_arousal);
    for (size_t t = 0; t < 5; ++t)
      EXPECT_EQ(back.videos_train[v].traits[t], ds.videos_train[v].traits[t]);
    ASSERT_EQ(back.videos_train[v].frames.size(), ds.videos_train[v].frames.size());
    ASSERT_EQ(back.videos_train[v].segments.size(), ds.videos_train[v].segments.size());
    for (size_t f = 0; f < ds.videos_train[v].frames.size(); ++f)
      for (int64_t p = 0; p < ds.videos_train[v].frames[f].image.numel(); ++p)
        EXPECT_EQ(back.videos_train[v].frames[f].image[p],
                  ds.videos_train[v].frames[f].image[p]);
  }
  EXPECT_EQ(back.config.seed, cfg.seed);
  EXPECT_EQ(back.config.rel.m[0][0], cfg.rel.m[0][0]);

  // Hash is stable across identical saves.
  uint64_t h1 = dataset_manifest_hash(dir);
  std::string dir2 = testing::TempDir() + "/persemon_ds2";
  std::filesystem::remove_all(dir2);
  save_dataset(dir2, ds);
  EXPECT_EQ(h1, dataset_manifest_hash(dir2));
}

TEST(PlantedRelationship, DeterministicMap) {
  PlantedRelationship rel = PlantedRelationship::defaults();
  auto a = rel.apply(0.3, -0.2);
  auto b = rel.apply(0.3, -0.2);
  for (size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(a[t], b[t]);
    double z = rel.m[t][0] * 0.3 + rel.m[t][1] * -0.2 + rel.b[t];
    EXPECT_DOUBLE_EQ(a[t], 1.0 / (1.0 + std::exp(-z)));
  }
  // Neuroticism row is exactly the negated openness row by construction.
  EXPECT_DOUBLE_EQ(rel.m[3][0], -rel.m[4][0]);
  EXPECT_DOUBLE_EQ(rel.m[3][1], -rel.m[4][1]);
}
