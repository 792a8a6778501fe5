#include "persemon/losses.hpp"

#include <cmath>

namespace persemon {

using ad::Value;

double smooth_l1(double x, double margin, ad::SmoothL1Variant variant) {
  if (margin <= 0.0) throw ContractError("smooth_l1 margin must be positive");
  double a = std::abs(x);
  if (variant == ad::SmoothL1Variant::kContinuous)
    return a < margin ? x * x / (2.0 * margin) : a - margin / 2.0;
  return a < margin ? 0.5 * x * x : a - 0.5;
}

namespace {

Value row_constant(const Tensor& t, int row) {
  check_shape(t.rank() == 2, "row_constant expects rank-2");
  int cols = t.dim(1);
  Tensor out({cols});
  std::copy_n(t.data() + static_cast<int64_t>(row) * cols, cols, out.data());
  return ad::constant(std::move(out));
}

Value reduce(Value total, int units, Reduction r) {
  return r == Reduction::kMean ? ad::scale(total, 1.0 / units) : total;
}

// One-hot mask over [N,2] selecting the true dataset column.
Tensor tag_mask(int n, DatasetTag tag) {
  Tensor m({n, 2});
  int col = tag == DatasetTag::kEmotion ? 0 : 1;
  for (int i = 0; i < n; ++i) m[static_cast<int64_t>(i) * 2 + col] = 1.0;
  return m;
}

struct FeaturePair {
  Value emotion;      // [n_emotion, D]
  Value personality;  // [n_videos*k, D]
};

// Loss bodies shared between the standalone terms (which build their own
// backbone pass) and total_loss (which shares one).

Value personality_term(const Model& m, const Batch& batch, const Value& video_feats,
                       const LossOptions& opts, bool trainable) {
  if (!batch.has_videos()) throw ContractError("personality_loss: batch has no videos");
  Value logits = m.pam_frame_logits(video_feats, trainable);  // [V*K,5]
  Value total;
  for (int v = 0; v < batch.n_videos; ++v) {
    Value frame_logits = ad::slice_rows(logits, v * batch.k, batch.k);
    Value traits = m.pam_video_traits(frame_logits, opts.consensus, opts.consensus_post_squash);
    Value diff = ad::sub(traits, row_constant(batch.personality_traits, v));
    Value term = ad::sum(ad::smooth_l1_each(diff, opts.weights.margin, opts.weights.variant));
    total = total ? ad::add(total, term) : term;
  }
  return reduce(total, batch.n_videos, opts.reduction);
}

Value emotion_term(const Model& m, const Batch& batch, const Value& frame_feats,
                   const LossOptions& opts, bool trainable) {
  if (!batch.has_emotion()) throw ContractError("emotion_loss: batch has no emotion frames");
  Value scores = m.eam_forward_value(frame_feats, trainable);  // [N,2]
  Value diff = ad::sub(scores, ad::constant(batch.emotion_labels));
  Value total = ad::sum(ad::smooth_l1_each(diff, opts.weights.margin, opts.weights.variant));
  return reduce(total, batch.n_emotion, opts.reduction);
}

Value ram_term(const Model& m, const Batch& batch, const Value& video_feats,
               const LossOptions& opts, bool trainable) {
  if (!batch.has_videos()) throw ContractError("ram_loss: batch has no videos");
  Value emotions = m.eam_forward_value(video_feats, trainable);  // [V*K,2]
  Value total;
  for (int v = 0; v < batch.n_videos; ++v) {
    Value frame_emotions = ad::slice_rows(emotions, v * batch.k, batch.k);
    Value traits =
        m.ram_forward_value(frame_emotions, opts.consensus, trainable, opts.ram_stop_gradient);
    Value diff = ad::sub(traits, row_constant(batch.personality_traits, v));
    Value term = ad::sum(ad::smooth_l1_each(diff, opts.weights.margin, opts.weights.variant));
    total = total ? ad::add(total, term) : term;
  }
  return reduce(total, batch.n_videos, opts.reduction);
}

// feats entries may be empty values when that batch side is absent.
Value discriminator_term(const Model& m, const Batch& batch, const FeaturePair& feats,
                         const LossOptions& opts, bool trainable_disc) {
  if (!batch.has_emotion() && !batch.has_videos())
    throw ContractError("discriminator_loss: empty batch");
  Value total;
  auto accumulate = [&](const Value& f, int n, DatasetTag tag) {
    Value logp = ad::log_softmax(m.discriminator_logits(f, trainable_disc));
    Value nll = ad::scale(ad::sum(ad::mul(logp, ad::constant(tag_mask(n, tag)))), -1.0);
    total = total ? ad::add(total, nll) : nll;
  };
  if (batch.has_videos())
    accumulate(feats.personality, batch.n_videos * batch.k, DatasetTag::kPersonality);
  if (batch.has_emotion()) accumulate(feats.emotion, batch.n_emotion, DatasetTag::kEmotion);
  return reduce(total, batch.total_frames(), opts.reduction);
}

Value adversarial_term(const Model& m, const Batch& batch, const FeaturePair& feats,
                       const LossOptions& opts) {
  if (!batch.has_emotion() && !batch.has_videos())
    throw ContractError("adversarial_confusion_loss: empty batch");
  Value total;
  auto accumulate = [&](const Value& f) {
    // Cross entropy against (1/2, 1/2): -(log q0 + log q1)/2 per frame.
    Value logp = ad::log_softmax(m.discriminator_logits(f, /*trainable=*/false));
    Value term = ad::scale(ad::sum(logp), -0.5);
    total = total ? ad::add(total, term) : term;
  };
  if (batch.has_videos()) accumulate(feats.personality);
  if (batch.has_emotion()) accumulate(feats.emotion);
  return reduce(total, batch.total_frames(), opts.reduction);
}

}  // namespace

Value personality_loss(const Model& m, const Batch& batch, const LossOptions& opts) {
  if (!batch.has_videos()) throw ContractError("personality_loss: batch has no videos");
  Value feats = m.fem_forward_value(batch.personality_frames, /*trainable=*/true);
  return personality_term(m, batch, feats, opts, true);
}

Value emotion_loss(const Model& m, const Batch& batch, const LossOptions& opts) {
  if (!batch.has_emotion()) throw ContractError("emotion_loss: batch has no emotion frames");
  Value feats = m.fem_forward_value(batch.emotion_images, /*trainable=*/true);
  return emotion_term(m, batch, feats, opts, true);
}

Value ram_loss(const Model& m, const Batch& batch, const LossOptions& opts) {
  if (!batch.has_videos()) throw ContractError("ram_loss: batch has no videos");
  Value feats = m.fem_forward_value(batch.personality_frames, /*trainable=*/true);
  return ram_term(m, batch, feats, opts, true);
}

Value discriminator_loss(const Model& m, const Batch& batch, const LossOptions& opts) {
  FeaturePair feats;
  if (batch.has_emotion())
    feats.emotion = m.fem_forward_value(batch.emotion_images, /*trainable=*/false);
  if (batch.has_videos())
    feats.personality = m.fem_forward_value(batch.personality_frames, /*trainable=*/false);
  return discriminator_term(m, batch, feats, opts, /*trainable_disc=*/true);
}

Value adversarial_confusion_loss(const Model& m, const Batch& batch, const LossOptions& opts) {
  FeaturePair feats;
  if (batch.has_emotion())
    feats.emotion = m.fem_forward_value(batch.emotion_images, /*trainable=*/true);
  if (batch.has_videos())
    feats.personality = m.fem_forward_value(batch.personality_frames, /*trainable=*/true);
  return adversarial_term(m, batch, feats, opts);
}

TotalLossResult total_loss(const Model& m, const Batch& batch, const LossOptions& opts,
                           const TermSelection& select) {
  const LossWeights& w = opts.weights;
  bool want_personality = select.personality && w.lambda1 != 0.0;
  bool want_emotion = select.emotion && w.lambda2 != 0.0;
  bool want_disc = select.discriminator && w.lambda3 != 0.0;
  bool want_adv = select.adversarial && w.lambda4 != 0.0;
  bool want_ram = select.ram && w.lambda5 != 0.0;

  bool need_main_video_feats = want_personality || want_adv || want_ram;
  bool need_main_emotion_feats = want_emotion || want_adv;
  bool need_any_video = need_main_video_feats || want_disc;
  bool need_any_emotion = need_main_emotion_feats || want_disc;

  if ((want_personality || want_ram) && !batch.has_videos())
    throw ContractError("total_loss: personality/ram term selected but batch has no videos");
  if (want_emotion && !batch.has_emotion())
    throw ContractError("total_loss: emotion term selected but batch has no emotion frames");
  if ((want_disc || want_adv) && !batch.has_emotion() && !batch.has_videos())
    throw ContractError("total_loss: coherence terms selected on an empty batch");

  FeaturePair feats;  // trainable backbone features, shared across terms
  if (batch.has_videos() && need_any_video)
    feats.personality =
        m.fem_forward_value(batch.personality_frames, /*trainable=*/need_main_video_feats);
  if (batch.has_emotion() && need_any_emotion)
    feats.emotion = m.fem_forward_value(batch.emotion_images, /*trainable=*/need_main_emotion_feats);

  TotalLossResult result;
  Value acc;
  auto take = [&acc](double lambda, const Value& term) {
    Value weighted = ad::scale(term, lambda);
    acc = acc ? ad::add(acc, weighted) : weighted;
  };

  if (want_personality) {
    Value t = personality_term(m, batch, feats.personality, opts, true);
    result.terms.personality = t.item();
    take(w.lambda1, t);
  }
  if (want_emotion) {
    Value t = emotion_term(m, batch, feats.emotion, opts, true);
    result.terms.emotion = t.item();
    take(w.lambda2, t);
  }
  if (want_disc) {
    // Detached features: the classifier term trains the classifier alone.
    FeaturePair frozen;
    if (batch.has_emotion()) frozen.emotion = ad::detach(feats.emotion);
    if (batch.has_videos()) frozen.personality = ad::detach(feats.personality);
    Value t = discriminator_term(m, batch, frozen, opts, /*trainable_disc=*/true);
    result.terms.discriminator = t.item();
    take(w.lambda3, t);
  }
  if (want_adv) {
    Value t = adversarial_term(m, batch, feats, opts);
    result.terms.adversarial = t.item();
    take(w.lambda4, t);
  }
  if (want_ram) {
    Value t = ram_term(m, batch, feats.personality, opts, true);
    result.terms.ram = t.item();
    take(w.lambda5, t);
  }

  result.value = acc ? acc : ad::constant(Tensor::scalar(0.0));
  result.terms.weighted_total = result.value.item();
  return result;
}

}  // namespace persemon
