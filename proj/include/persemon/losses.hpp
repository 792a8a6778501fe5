#pragma once

#include "persemon/autodiff.hpp"
#include "persemon/model.hpp"
#include "persemon/synthetic.hpp"

namespace persemon {

struct LossWeights {
  double lambda1 = 1.0;   // personality
  double lambda2 = 1.0;   // emotion
  double lambda3 = 0.1;   // dataset classifier
  double lambda4 = 0.1;   // adversarial confusion
  double lambda5 = 0.1;   // relationship regressor
  double margin = 0.05;
  ad::SmoothL1Variant variant = ad::SmoothL1Variant::kContinuous;
};

// kSum matches the plain per-sample sums; kMean divides by the number of
// reduction units (videos or frames) so the learning rate decouples from
// batch composition. Training defaults to kMean; this is logged.
enum class Reduction { kSum, kMean };

struct LossOptions {
  LossWeights weights;
  Reduction reduction = Reduction::kMean;
  Consensus consensus = Consensus::kAverage;
  bool consensus_post_squash = false;
  bool ram_stop_gradient = false;
};

// Scalar reference form, used directly by oracles and docs.
double smooth_l1(double x, double margin, ad::SmoothL1Variant variant);

// --- individual objective terms -------------------------------------------
// Each builds a self-contained graph from the model (backbone bound as
// trainable unless noted). Empty required batch side -> ContractError.

// Sum over videos of margin smooth-l1 between labels and the consensus
// personality prediction.
ad::Value personality_loss(const Model& m, const Batch& batch, const LossOptions& opts);

// Per-frame margin smooth-l1 on (arousal, valence).
ad::Value emotion_loss(const Model& m, const Batch& batch, const LossOptions& opts);

// NLL of the true dataset tag under the dataset classifier. Features are
// constants here: no gradient reaches the backbone or branch heads.
ad::Value discriminator_loss(const Model& m, const Batch& batch, const LossOptions& opts);

// Cross entropy between uniform (1/2,1/2) and the classifier output, with
// the classifier weights held constant: gradients flow to the backbone only.
ad::Value adversarial_confusion_loss(const Model& m, const Batch& batch, const LossOptions& opts);

// Sum over videos of margin smooth-l1 between labels and the relationship
// head applied to the consensus of per-frame emotion scores.
ad::Value ram_loss(const Model& m, const Batch& batch, const LossOptions& opts);

// --- weighted total ---------------------------------------------------------

struct LossTerms {
  double personality = 0.0;
  double emotion = 0.0;
  double discriminator = 0.0;
  double adversarial = 0.0;
  double ram = 0.0;
  double weighted_total = 0.0;
};

struct TermSelection {
  bool personality = true;
  bool emotion = true;
  bool discriminator = true;
  bool adversarial = true;
  bool ram = true;
};

struct TotalLossResult {
  ad::Value value;  // weighted sum over the selected terms
  LossTerms terms;  // raw per-term values (0 for skipped terms)
};

// One graph holding every selected term. The backbone pass is shared; the
// classifier term sees detached features, the confusion term sees constant
// classifier weights, so one backward() yields correctly partitioned
// gradients for all five parameter groups. Terms with a zero weight are
// skipped entirely.
TotalLossResult total_loss(const Model& m, const Batch& batch, const LossOptions& opts,
                           const TermSelection& select = {});

}  // namespace persemon
