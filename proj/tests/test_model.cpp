#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "persemon/model.hpp"

using namespace persemon;

namespace {

Tensor random_images(int n, int s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t({n, 1, s, s});
  fill_uniform(t, rng, 0.0, 1.0);
  return t;
}

Model micro_model(uint64_t seed = 1) { return Model(ArchitectureConfig::micro(), seed); }

void zero_head(HeadParams& head) {
  head.w->value.fill(0.0);
  head.b->value.fill(0.0);
}

}  // namespace

TEST(Architecture, Presets) {
  ArchitectureConfig full = ArchitectureConfig::full();
  EXPECT_EQ(full.conv_widths, (std::array<int, 4>{64, 128, 256, 512}));
  EXPECT_EQ(full.residual_units, (std::array<int, 4>{1, 2, 4, 1}));
  EXPECT_EQ(full.feature_dim, 512);
  EXPECT_EQ(full.ram_hidden, 128);

  ArchitectureConfig micro = ArchitectureConfig::micro();
  EXPECT_EQ(micro.conv_widths, (std::array<int, 4>{8, 16, 32, 64}));
  EXPECT_EQ(micro.input_size, 32);
  EXPECT_EQ(micro.feature_dim, 64);
  EXPECT_EQ(micro.spatial_after_backbone(), 2);
  EXPECT_EQ(micro.flattened_dim(), 256);
}

TEST(Fem, MicroOutputShapeAndDeterminism) {
  Model m = micro_model();
  Tensor batch = random_images(4, 32, 6);
  // Make frames 0 and 2 identical.
  std::copy_n(batch.data(), 1024, batch.data() + 2 * 1024);

  Tensor feats = m.fem_forward(batch);
  ASSERT_EQ(feats.shape(), (std::vector<int>{4, 64}));
  for (int j = 0; j < 64; ++j) EXPECT_EQ(feats[j], feats[2 * 64 + j]);

  Tensor again = m.fem_forward(batch);
  for (int64_t i = 0; i < feats.numel(); ++i) EXPECT_EQ(feats[i], again[i]);
}

TEST(Fem, InputSizeMismatchRejected) {
  Model m = micro_model();
  EXPECT_THROW(m.fem_forward(random_images(1, 16, 7)), ShapeError);
}

TEST(Fem, FullPresetOutputs512Features) {
  Model m(ArchitectureConfig::full(), 3);
  Tensor feats = m.fem_forward(random_images(1, 96, 9));
  EXPECT_EQ(feats.shape(), (std::vector<int>{1, 512}));
  EXPECT_TRUE(feats.all_finite());
}

TEST(Pam, SingleFrameConsensusIsSigmoidOfLogits) {
  Model m = micro_model(11);
  Tensor feats = m.fem_forward(random_images(1, 32, 13));
  Model::PamResult r = m.pam_forward(feats);
  ASSERT_EQ(r.per_frame_logits.shape(), (std::vector<int>{1, 5}));
  for (int t = 0; t < 5; ++t) {
    double expect = 1.0 / (1.0 + std::exp(-r.per_frame_logits[t]));
    EXPECT_NEAR(r.video_traits[static_cast<size_t>(t)], expect, 1e-15);
  }
}

TEST(Pam, IdenticalFramesMatchSingleFrame) {
  Model m = micro_model(17);
  Tensor one = m.fem_forward(random_images(1, 32, 19));
  Tensor k({6, 64});
  for (int i = 0; i < 6; ++i) std::copy_n(one.data(), 64, k.data() + static_cast<int64_t>(i) * 64);
  auto single = m.pam_forward(one).video_traits;
  auto many = m.pam_forward(k).video_traits;
  for (size_t t = 0; t < 5; ++t) EXPECT_NEAR(many[t], single[t], 1e-12);
}

TEST(Pam, PermutationInvariant) {
  Model m = micro_model(23);
  Tensor feats = m.fem_forward(random_images(5, 32, 29));
  Tensor shuffled({5, 64});
  int order[5] = {3, 0, 4, 2, 1};
  for (int i = 0; i < 5; ++i)
    std::copy_n(feats.data() + static_cast<int64_t>(order[i]) * 64, 64,
                shuffled.data() + static_cast<int64_t>(i) * 64);
  auto a = m.pam_forward(feats).video_traits;
  auto b = m.pam_forward(shuffled).video_traits;
  for (size_t t = 0; t < 5; ++t) EXPECT_NEAR(a[t], b[t], 1e-12);
}

TEST(Pam, ConsensusAgainstExplicitLoop) {
  Model m = micro_model(31);
  Tensor feats = m.fem_forward(random_images(7, 32, 37));
  Model::PamResult r = m.pam_forward(feats);
  for (int t = 0; t < 5; ++t) {
    double acc = 0.0;
    for (int k = 0; k < 7; ++k) acc += r.per_frame_logits[k * 5 + t];
    double expect = 1.0 / (1.0 + std::exp(-acc / 7.0));
    EXPECT_NEAR(r.video_traits[static_cast<size_t>(t)], expect, 1e-12);
  }
}

TEST(Pam, PostSquashVariantDiffers) {
  Model m = micro_model(41);
  Tensor feats = m.fem_forward(random_images(4, 32, 43));
  auto pre = m.pam_forward(feats, Consensus::kAverage, false).video_traits;
  auto post = m.pam_forward(feats, Consensus::kAverage, true).video_traits;
  // Mean of sigmoids of distinct logits is generally not sigmoid of mean.
  bool differs = false;
  for (size_t t = 0; t < 5; ++t) differs |= std::abs(pre[t] - post[t]) > 1e-9;
  EXPECT_TRUE(differs);
  // Explicit post-squash oracle.
  Model::PamResult r = m.pam_forward(feats, Consensus::kAverage, true);
  for (int t = 0; t < 5; ++t) {
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += 1.0 / (1.0 + std::exp(-r.per_frame_logits[k * 5 + t]));
    EXPECT_NEAR(post[static_cast<size_t>(t)], acc / 4.0, 1e-12);
  }
}

TEST(Eam, ZeroWeightsGiveZeroScoresAndRangeHolds) {
  Model m = micro_model(47);
  zero_head(m.params().eam);
  Tensor feats = m.fem_forward(random_images(3, 32, 49));
  Tensor scores = m.eam_forward(feats);
  for (int64_t i = 0; i < scores.numel(); ++i) EXPECT_DOUBLE_EQ(scores[i], 0.0);

  Model m2 = micro_model(53);
  Tensor s2 = m2.eam_forward(m2.fem_forward(random_images(6, 32, 59)));
  for (int64_t i = 0; i < s2.numel(); ++i) {
    EXPECT_GT(s2[i], -1.0);
    EXPECT_LT(s2[i], 1.0);
  }
}

TEST(Eam, GradientReachesBackbone) {
  Model m = micro_model(61);
  ad::zero_grad(m.params().all());
  ad::Value feats = m.fem_forward_value(random_images(2, 32, 67), /*trainable=*/true);
  ad::Value scores = m.eam_forward_value(feats, /*trainable=*/true);
  ad::backward(ad::sum(scores));
  double norm = 0.0;
  for (const auto& p : m.params().fem_group())
    for (int64_t i = 0; i < p->grad.numel(); ++i) norm += p->grad[i] * p->grad[i];
  EXPECT_GT(norm, 0.0);
}

TEST(Ram, MeanConsensusCollapsesFrames) {
  Model m = micro_model(71);
  std::mt19937_64 rng(73);
  Tensor emotions({8, 2});
  fill_uniform(emotions, rng, -0.9, 0.9);

  auto direct = m.ram_forward(emotions);

  // K copies of the mean emotion give the identical output.
  Tensor mean({1, 2});
  for (int k = 0; k < 8; ++k) {
    mean[0] += emotions[k * 2] / 8.0;
    mean[1] += emotions[k * 2 + 1] / 8.0;
  }
  Tensor copies({8, 2});
  for (int k = 0; k < 8; ++k) {
    copies[k * 2] = mean[0];
    copies[k * 2 + 1] = mean[1];
  }
  auto collapsed = m.ram_forward(copies);
  for (size_t t = 0; t < 5; ++t) EXPECT_NEAR(direct[t], collapsed[t], 1e-12);

  // Frame order is irrelevant.
  Tensor shuffled = emotions;
  std::swap(shuffled.vec()[0], shuffled.vec()[14]);
  std::swap(shuffled.vec()[1], shuffled.vec()[15]);
  auto reordered = m.ram_forward(shuffled);
  for (size_t t = 0; t < 5; ++t) EXPECT_NEAR(direct[t], reordered[t], 1e-12);
}

TEST(Ram, ZeroWeightsGiveNeutralTraits) {
  Model m = micro_model(79);
  m.params().ram.fc4_w->value.fill(0.0);
  m.params().ram.fc4_b->value.fill(0.0);
  m.params().ram.fc5_w->value.fill(0.0);
  m.params().ram.fc5_b->value.fill(0.0);
  Tensor emotions({3, 2}, {0.1, -0.2, 0.4, 0.0, -0.5, 0.3});
  auto traits = m.ram_forward(emotions);
  for (size_t t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(traits[t], 0.5);
}

TEST(Ram, OutputsInOpenUnitInterval) {
  Model m = micro_model(83);
  std::mt19937_64 rng(89);
  Tensor emotions({5, 2});
  fill_uniform(emotions, rng, -1.0, 1.0);
  auto traits = m.ram_forward(emotions);
  for (double t : traits) {
    EXPECT_GT(t, 0.0);
    EXPECT_LT(t, 1.0);
  }
}

TEST(Discriminator, SoftmaxRowsAndZeroWeights) {
  Model m = micro_model(97);
  Tensor feats = m.fem_forward(random_images(4, 32, 101));
  Tensor probs = m.discriminator_forward(feats);
  ASSERT_EQ(probs.shape(), (std::vector<int>{4, 2}));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(probs[i * 2] + probs[i * 2 + 1], 1.0, 1e-12);

  zero_head(m.params().disc);
  Tensor uniform = m.discriminator_forward(feats);
  for (int64_t i = 0; i < uniform.numel(); ++i) EXPECT_DOUBLE_EQ(uniform[i], 0.5);
}

TEST(Fuse, WeightedAverageAndLimits) {
  std::array<double, 5> pam{0.7, 0.7, 0.7, 0.7, 0.7};
  std::array<double, 5> ram{0.0, 0.0, 0.0, 0.0, 0.0};
  auto fused = fuse_pam_ram(pam, ram, 6.0, 1.0);
  for (double v : fused) EXPECT_NEAR(v, 0.6, 1e-15);

  std::array<double, 5> same{0.3, 0.4, 0.5, 0.6, 0.7};
  auto eq = fuse_pam_ram(same, same, 2.0, 5.0);
  for (size_t t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(eq[t], same[t]);

  auto nearly_pam = fuse_pam_ram(pam, ram, 1.0, 1e-9);
  for (double v : nearly_pam) EXPECT_NEAR(v, 0.7, 1e-8);

  EXPECT_THROW(fuse_pam_ram(pam, ram, 0.0, 1.0), ContractError);
  EXPECT_THROW(fuse_pam_ram(pam, ram, 1.0, -2.0), ContractError);
}

TEST(Sharing, BackboneStorageIsIdenticalAcrossBranches) {
  Model m = micro_model(103);
  Tensor images = random_images(2, 32, 107);

  // Personality path graph and emotion path graph.
  ad::Value pam_out =
      m.pam_frame_logits(m.fem_forward_value(images, true), true);
  ad::Value eam_out = m.eam_forward_value(m.fem_forward_value(images, true), true);

  auto fem_set = [](const ad::Value& v) {
    std::set<ad::Param*> s;
    for (ad::Param* p : ad::collect_bound_params(v))
      if (p->name.rfind("fem.", 0) == 0) s.insert(p);
    return s;
  };
  std::set<ad::Param*> from_pam = fem_set(pam_out);
  std::set<ad::Param*> from_eam = fem_set(eam_out);
  ASSERT_FALSE(from_pam.empty());
  EXPECT_EQ(from_pam, from_eam);  // same Param objects, not equal copies

  std::set<ad::Param*> declared;
  for (const auto& p : m.params().fem_group()) declared.insert(p.get());
  EXPECT_EQ(from_pam, declared);
}

TEST(Params, GroupsAreDisjointAndComplete) {
  Model m = micro_model(109);
  std::set<ad::Param*> seen;
  size_t total = 0;
  for (const auto& group : {m.params().fem_group(), m.params().pam_group(),
                            m.params().eam_group(), m.params().ram_group(),
                            m.params().disc_group()}) {
    total += group.size();
    for (const auto& p : group) seen.insert(p.get());
  }
  EXPECT_EQ(seen.size(), total);  // no tensor in two groups
  EXPECT_EQ(m.params().all().size(), total);
}

TEST(Checkpoint, RoundTripAndArchMismatch) {
  Model m = micro_model(113);
  std::string dir = testing::TempDir() + "/persemon_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, m, 42, 99, /*with_momentum=*/true);

  LoadedModel lm = load_checkpoint(dir);
  EXPECT_EQ(lm.info.step, 42);
  EXPECT_EQ(lm.info.seed, 99u);
  EXPECT_TRUE(lm.info.arch == m.arch());
  auto orig = m.params().all();
  auto back = lm.model.params().all();
  ASSERT_EQ(orig.size(), back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    EXPECT_EQ(orig[i]->name, back[i]->name);
    ASSERT_TRUE(orig[i]->value.same_shape(back[i]->value));
    for (int64_t j = 0; j < orig[i]->value.numel(); ++j)
      EXPECT_EQ(orig[i]->value[j], back[i]->value[j]);
  }

  EXPECT_THROW(load_checkpoint(dir, ArchitectureConfig::full()), ConfigError);
}

TEST(Model, CloneIsDeepCopy) {
  Model m = micro_model(127);
  Model copy = m.clone();
  copy.params().pam.w->value.fill(7.0);
  EXPECT_NE(m.params().pam.w->value[0], 7.0);
  EXPECT_NE(m.params().pam.w.get(), copy.params().pam.w.get());
}
