#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "persemon/losses.hpp"
#include "persemon/synthetic.hpp"

using namespace persemon;
using ad::SmoothL1Variant;

namespace {

Model micro_model(uint64_t seed = 1) { return Model(ArchitectureConfig::micro(), seed); }

Batch tiny_batch(int n_emotion, int n_videos, int k, uint64_t seed) {
  ShiftParams emo_shift{0.15, 0.12, 4.0};
  RenderParams rp;
  auto emotion = gen_emotion_set(std::max(n_emotion, 1) + 4, derive_seed(seed, 1), emo_shift, rp);
  auto videos = gen_personality_set(n_videos + 2, std::max(2 * k, 4), k, derive_seed(seed, 2),
                                    PlantedRelationship::defaults(), ShiftParams{}, rp, 0.05);
  return make_batch(emotion, videos, n_emotion, n_videos, derive_seed(seed, 3));
}

void zero_params(const std::vector<ad::ParamPtr>& group) {
  for (const auto& p : group) p->value.fill(0.0);
}

LossOptions sum_opts() {
  LossOptions o;
  o.reduction = Reduction::kSum;
  return o;
}

double grad_sq(const std::vector<ad::ParamPtr>& group) {
  double s = 0.0;
  for (const auto& p : group)
    for (int64_t i = 0; i < p->grad.numel(); ++i) s += p->grad[i] * p->grad[i];
  return s;
}

}  // namespace

// --- smooth_l1 scalar --------------------------------------------------

TEST(SmoothL1, ZeroAndKneeContinuity) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.0, 0.05, SmoothL1Variant::kContinuous), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(0.0, 0.05, SmoothL1Variant::kPaperLiteral), 0.0);

  // At the knee both branches give m/2 = 0.025.
  EXPECT_DOUBLE_EQ(smooth_l1(0.05, 0.05, SmoothL1Variant::kContinuous), 0.025);
  double inside = smooth_l1(0.05 - 1e-13, 0.05, SmoothL1Variant::kContinuous);
  double outside = smooth_l1(0.05 + 1e-13, 0.05, SmoothL1Variant::kContinuous);
  EXPECT_NEAR(inside, outside, 1e-12);

  // The printed form is discontinuous and negative just past the margin.
  EXPECT_NEAR(smooth_l1(0.06, 0.05, SmoothL1Variant::kPaperLiteral), -0.44, 1e-15);

  EXPECT_THROW(smooth_l1(0.1, 0.0, SmoothL1Variant::kContinuous), ContractError);
  EXPECT_THROW(smooth_l1(0.1, -0.1, SmoothL1Variant::kContinuous), ContractError);
}

TEST(SmoothL1, ContinuousIsNonnegativeWithClampedSlope) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double m = 0.05, h = 1e-6;
  for (int i = 0; i < 2000; ++i) {
    double x = u(rng);
    EXPECT_GE(smooth_l1(x, m, SmoothL1Variant::kContinuous), 0.0);
  }
  // Finite differences across the knee: slope saturates at +-1 outside.
  for (double x : {m + 0.001, 0.3, 1.7}) {
    double d = (smooth_l1(x + h, m, SmoothL1Variant::kContinuous) -
                smooth_l1(x - h, m, SmoothL1Variant::kContinuous)) /
               (2 * h);
    EXPECT_NEAR(d, 1.0, 1e-6);
    double dn = (smooth_l1(-x + h, m, SmoothL1Variant::kContinuous) -
                 smooth_l1(-x - h, m, SmoothL1Variant::kContinuous)) /
                (2 * h);
    EXPECT_NEAR(dn, -1.0, 1e-6);
  }
  // C1 at the knee: slope approaches 1 from inside.
  double inside = (smooth_l1(m - h, m, SmoothL1Variant::kContinuous) -
                   smooth_l1(m - 3 * h, m, SmoothL1Variant::kContinuous)) /
                  (2 * h);
  EXPECT_NEAR(inside, 1.0, 1e-3);
}

// --- personality loss --------------------------------------------------

TEST(PersonalityLoss, PerfectPredictionIsZero) {
  Model m = micro_model(5);
  zero_params(m.params().pam_group());  // logits 0 -> traits 0.5
  Batch batch = tiny_batch(0, 2, 3, 7);
  batch.personality_traits.fill(0.5);
  EXPECT_DOUBLE_EQ(personality_loss(m, batch, sum_opts()).item(), 0.0);
}

TEST(PersonalityLoss, SingleTraitAnalyticValue) {
  Model m = micro_model(9);
  zero_params(m.params().pam_group());
  Batch batch = tiny_batch(0, 1, 3, 11);
  batch.personality_traits.fill(0.5);
  batch.personality_traits[2] = 0.52;  // one trait off by 0.02
  // smooth_l1(0.02) with m=0.05: 0.02^2 / 0.1 = 0.004.
  EXPECT_NEAR(personality_loss(m, batch, sum_opts()).item(), 0.004, 1e-15);
}

TEST(PersonalityLoss, BatchAdditivityAgainstLoopOracle) {
  Model m = micro_model(13);
  Batch batch = tiny_batch(0, 5, 3, 17);
  double whole = personality_loss(m, batch, sum_opts()).item();
  double parts = 0.0;
  for (int v = 0; v < 5; ++v) {
    Batch single;
    single.n_videos = 1;
    single.k = batch.k;
    single.personality_frames = Tensor({batch.k, 1, 32, 32});
    std::copy_n(batch.personality_frames.data() + static_cast<int64_t>(v) * batch.k * 1024,
                static_cast<int64_t>(batch.k) * 1024, single.personality_frames.data());
    single.personality_traits = Tensor({1, 5});
    std::copy_n(batch.personality_traits.data() + static_cast<int64_t>(v) * 5, 5,
                single.personality_traits.data());
    parts += personality_loss(m, single, sum_opts()).item();
  }
  EXPECT_NEAR(whole, parts, 1e-12);
}

TEST(PersonalityLoss, EmptyBatchRejected) {
  Model m = micro_model(19);
  Batch batch = tiny_batch(3, 0, 3, 23);
  EXPECT_THROW(personality_loss(m, batch, sum_opts()), ContractError);
}

// --- emotion loss --------------------------------------------------------

TEST(EmotionLoss, PerfectAndAnalytic) {
  Model m = micro_model(29);
  zero_params(m.params().eam_group());  // scores (0,0)
  Batch batch = tiny_batch(1, 0, 3, 31);
  batch.emotion_labels.fill(0.0);
  EXPECT_DOUBLE_EQ(emotion_loss(m, batch, sum_opts()).item(), 0.0);

  // Error (0.1, 0): smooth_l1 = 0.1 - 0.025 = 0.075.
  batch.emotion_labels[0] = -0.1;
  EXPECT_NEAR(emotion_loss(m, batch, sum_opts()).item(), 0.075, 1e-15);
}

TEST(EmotionLoss, BatchAdditivity) {
  Model m = micro_model(37);
  Batch batch = tiny_batch(6, 0, 3, 41);
  double whole = emotion_loss(m, batch, sum_opts()).item();
  double parts = 0.0;
  for (int i = 0; i < 6; ++i) {
    Batch single;
    single.n_emotion = 1;
    single.emotion_images = Tensor({1, 1, 32, 32});
    std::copy_n(batch.emotion_images.data() + static_cast<int64_t>(i) * 1024, 1024,
                single.emotion_images.data());
    single.emotion_labels = Tensor({1, 2});
    single.emotion_labels[0] = batch.emotion_labels[i * 2];
    single.emotion_labels[1] = batch.emotion_labels[i * 2 + 1];
    parts += emotion_loss(m, single, sum_opts()).item();
  }
  EXPECT_NEAR(whole, parts, 1e-12);
}

TEST(EmotionLoss, MeanReductionDividesByFrameCount) {
  Model m = micro_model(43);
  Batch batch = tiny_batch(4, 0, 3, 47);
  LossOptions mean_opts;
  mean_opts.reduction = Reduction::kMean;
  EXPECT_NEAR(emotion_loss(m, batch, sum_opts()).item() / 4.0,
              emotion_loss(m, batch, mean_opts).item(), 1e-14);
}

// --- classifier and confusion losses -------------------------------------

TEST(DiscriminatorLoss, UniformClassifierGivesLog2PerFrame) {
  Model m = micro_model(53);
  zero_params(m.params().disc_group());
  Batch batch = tiny_batch(2, 1, 2, 59);  // 2 + 2 = 4 frames
  EXPECT_NEAR(discriminator_loss(m, batch, sum_opts()).item(), 4.0 * std::log(2.0), 1e-12);
}

TEST(DiscriminatorLoss, ConfidentWrongPrediction) {
  Model m = micro_model(61);
  zero_params(m.params().disc_group());
  // Bias alone fixes q = (0.1, 0.9) for every frame; emotion truth is column 0.
  m.params().disc.b->value[0] = std::log(0.1);
  m.params().disc.b->value[1] = std::log(0.9);
  Batch batch = tiny_batch(1, 0, 2, 67);
  EXPECT_NEAR(discriminator_loss(m, batch, sum_opts()).item(), -std::log(0.1), 1e-12);
}

TEST(DiscriminatorLoss, NoGradientLeaksPastFeatures) {
  Model m = micro_model(71);
  Batch batch = tiny_batch(3, 2, 3, 73);
  ad::zero_grad(m.params().all());
  ad::backward(discriminator_loss(m, batch, sum_opts()));
  EXPECT_GT(grad_sq(m.params().disc_group()), 0.0);
  EXPECT_EQ(grad_sq(m.params().fem_group()), 0.0);
  EXPECT_EQ(grad_sq(m.params().pam_group()), 0.0);
  EXPECT_EQ(grad_sq(m.params().eam_group()), 0.0);
  EXPECT_EQ(grad_sq(m.params().ram_group()), 0.0);
}

TEST(AdversarialLoss, UniformIsGlobalMinimumAtLog2) {
  Model m = micro_model(79);
  zero_params(m.params().disc_group());  // q = (0.5, 0.5)
  Batch batch = tiny_batch(1, 0, 2, 83);
  EXPECT_NEAR(adversarial_confusion_loss(m, batch, sum_opts()).item(), std::log(2.0), 1e-12);
}

TEST(AdversarialLoss, SkewedAndSymmetric) {
  Model m = micro_model(89);
  zero_params(m.params().disc_group());
  m.params().disc.b->value[0] = std::log(0.9);
  m.params().disc.b->value[1] = std::log(0.1);
  Batch batch = tiny_batch(1, 0, 2, 97);
  double skewed = adversarial_confusion_loss(m, batch, sum_opts()).item();
  EXPECT_NEAR(skewed, -0.5 * (std::log(0.9) + std::log(0.1)), 1e-12);
  EXPECT_NEAR(skewed, 1.2040, 5e-5);

  std::swap(m.params().disc.b->value[0], m.params().disc.b->value[1]);
  EXPECT_NEAR(adversarial_confusion_loss(m, batch, sum_opts()).item(), skewed, 1e-12);

  EXPECT_GT(skewed, std::log(2.0));  // log 2 is the minimum
}

TEST(AdversarialLoss, NoGradientReachesClassifier) {
  Model m = micro_model(101);
  Batch batch = tiny_batch(3, 2, 3, 103);
  ad::zero_grad(m.params().all());
  ad::backward(adversarial_confusion_loss(m, batch, sum_opts()));
  EXPECT_EQ(grad_sq(m.params().disc_group()), 0.0);
  EXPECT_GT(grad_sq(m.params().fem_group()), 0.0);
}

// --- relationship loss -----------------------------------------------------

TEST(RamLoss, PerfectPredictionIsZero) {
  Model m = micro_model(107);
  zero_params(m.params().ram_group());  // output 0.5 per trait
  Batch batch = tiny_batch(0, 2, 3, 109);
  batch.personality_traits.fill(0.5);
  EXPECT_DOUBLE_EQ(ram_loss(m, batch, sum_opts()).item(), 0.0);
}

TEST(RamLoss, StopGradientCutsBackbone) {
  Model m = micro_model(113);
  Batch batch = tiny_batch(0, 2, 3, 127);

  LossOptions opts = sum_opts();
  opts.ram_stop_gradient = true;
  ad::zero_grad(m.params().all());
  ad::backward(ram_loss(m, batch, opts));
  EXPECT_GT(grad_sq(m.params().ram_group()), 0.0);
  EXPECT_EQ(grad_sq(m.params().fem_group()), 0.0);
  EXPECT_EQ(grad_sq(m.params().eam_group()), 0.0);

  opts.ram_stop_gradient = false;
  ad::zero_grad(m.params().all());
  ad::backward(ram_loss(m, batch, opts));
  EXPECT_GT(grad_sq(m.params().fem_group()), 0.0);
  EXPECT_GT(grad_sq(m.params().eam_group()), 0.0);
}

TEST(RamLoss, BatchAdditivity) {
  Model m = micro_model(131);
  Batch batch = tiny_batch(0, 4, 3, 137);
  double whole = ram_loss(m, batch, sum_opts()).item();
  double parts = 0.0;
  for (int v = 0; v < 4; ++v) {
    Batch single;
    single.n_videos = 1;
    single.k = batch.k;
    single.personality_frames = Tensor({batch.k, 1, 32, 32});
    std::copy_n(batch.personality_frames.data() + static_cast<int64_t>(v) * batch.k * 1024,
                static_cast<int64_t>(batch.k) * 1024, single.personality_frames.data());
    single.personality_traits = Tensor({1, 5});
    std::copy_n(batch.personality_traits.data() + static_cast<int64_t>(v) * 5, 5,
                single.personality_traits.data());
    parts += ram_loss(m, single, sum_opts()).item();
  }
  EXPECT_NEAR(whole, parts, 1e-12);
}

// --- total loss --------------------------------------------------------

TEST(TotalLoss, AllZeroWeightsGiveZero) {
  Model m = micro_model(139);
  Batch batch = tiny_batch(2, 1, 2, 149);
  LossOptions opts = sum_opts();
  opts.weights.lambda1 = opts.weights.lambda2 = opts.weights.lambda3 = opts.weights.lambda4 =
      opts.weights.lambda5 = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(m, batch, opts).value.item(), 0.0);
}

TEST(TotalLoss, ReducesToTaskTermsWhenRegularizersOff) {
  Model m = micro_model(151);
  Batch batch = tiny_batch(3, 2, 3, 157);
  LossOptions opts = sum_opts();
  opts.weights.lambda3 = opts.weights.lambda4 = opts.weights.lambda5 = 0.0;
  double combined = total_loss(m, batch, opts).value.item();
  double per = personality_loss(m, batch, opts).item();
  double emo = emotion_loss(m, batch, opts).item();
  EXPECT_NEAR(combined, per + emo, 1e-12);
}

TEST(TotalLoss, MatchesHandAssembledWeightedSum) {
  Model m = micro_model(163);
  Batch batch = tiny_batch(4, 2, 3, 167);
  LossOptions opts = sum_opts();  // default lambdas 1,1,0.1,0.1,0.1

  TotalLossResult res = total_loss(m, batch, opts);
  double per = personality_loss(m, batch, opts).item();
  double emo = emotion_loss(m, batch, opts).item();
  double disc = discriminator_loss(m, batch, opts).item();
  double adv = adversarial_confusion_loss(m, batch, opts).item();
  double ram = ram_loss(m, batch, opts).item();

  double hand = opts.weights.lambda1 * per + opts.weights.lambda2 * emo +
                opts.weights.lambda3 * disc + opts.weights.lambda4 * adv +
                opts.weights.lambda5 * ram;
  EXPECT_NEAR(res.value.item(), hand, 1e-12);
  EXPECT_NEAR(res.terms.personality, per, 1e-12);
  EXPECT_NEAR(res.terms.emotion, emo, 1e-12);
  EXPECT_NEAR(res.terms.discriminator, disc, 1e-12);
  EXPECT_NEAR(res.terms.adversarial, adv, 1e-12);
  EXPECT_NEAR(res.terms.ram, ram, 1e-12);
}

TEST(TotalLoss, LinearInTheWeights) {
  Model m = micro_model(173);
  Batch batch = tiny_batch(3, 2, 3, 179);
  LossOptions base = sum_opts();
  LossTerms raw = total_loss(m, batch, base).terms;

  std::mt19937_64 rng(181);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 3; ++trial) {
    LossOptions opts = sum_opts();
    opts.weights.lambda1 = u(rng);
    opts.weights.lambda2 = u(rng);
    opts.weights.lambda3 = u(rng);
    opts.weights.lambda4 = u(rng);
    opts.weights.lambda5 = u(rng);
    double expect = opts.weights.lambda1 * raw.personality + opts.weights.lambda2 * raw.emotion +
                    opts.weights.lambda3 * raw.discriminator +
                    opts.weights.lambda4 * raw.adversarial + opts.weights.lambda5 * raw.ram;
    EXPECT_NEAR(total_loss(m, batch, opts).value.item(), expect, 1e-12);
  }
}

TEST(TotalLoss, GradientPartitionAcrossSubObjectives) {
  Model m = micro_model(191);
  Batch batch = tiny_batch(3, 2, 3, 193);
  LossOptions opts = sum_opts();

  // Full graph: classifier gradient comes only from the lambda3 term.
  ad::zero_grad(m.params().all());
  TotalLossResult full = total_loss(m, batch, opts);
  ad::backward(full.value);
  Tensor disc_grad_full = m.params().disc.w->grad;

  ad::zero_grad(m.params().all());
  ad::backward(ad::scale(discriminator_loss(m, batch, opts), opts.weights.lambda3));
  for (int64_t i = 0; i < disc_grad_full.numel(); ++i)
    EXPECT_NEAR(disc_grad_full[i], m.params().disc.w->grad[i], 1e-12);
}

TEST(TotalLoss, SelectionErrorsWhenDataMissing) {
  Model m = micro_model(197);
  Batch emotion_only = tiny_batch(3, 0, 3, 199);
  LossOptions opts = sum_opts();
  EXPECT_THROW(total_loss(m, emotion_only, opts), ContractError);

  TermSelection sel;
  sel.personality = sel.ram = false;
  sel.discriminator = sel.adversarial = false;
  EXPECT_NO_THROW(total_loss(m, emotion_only, opts, sel));
}
