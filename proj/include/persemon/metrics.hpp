#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "persemon/dataset_io.hpp"
#include "persemon/model.hpp"

namespace persemon {

// 1 - mean absolute error.
double mean_accuracy(const std::vector<double>& labels, const std::vector<double>& preds);

// Standard coefficient of determination 1 - SS_res/SS_tot. Zero label
// variance makes it undefined -> nullopt, never silently 0.
std::optional<double> r_squared(const std::vector<double>& labels,
                                const std::vector<double>& preds);

// Mean squared error over all entries.
double mse(const std::vector<double>& labels, const std::vector<double>& preds);

// Binary logistic regression on z-scored features, deterministic full-batch
// gradient descent from zero init. Used as the linear probe (and for the
// raw-pixel dataset-shift check).
struct LinearProbe {
  Tensor weights;  // [D+1], last entry is the bias (applied to z-scored x)
  Tensor mean, stddev;

  void fit(const Tensor& x, const std::vector<int>& y, int iters = 600, double lr = 0.5,
           double momentum = 0.9);
  double decision(const double* row) const;  // logit for one (raw) feature row
  double accuracy(const Tensor& x, const std::vector<int>& y) const;
};

struct TraitMetrics {
  std::array<double, 5> mse_per_trait{};
  std::array<double, 5> a_per_trait{};
  std::array<std::optional<double>, 5> r2_per_trait{};
  double mse_avg = 0.0;
  double a_avg = 0.0;
  std::optional<double> r2_avg;  // defined only when every trait's is
  int count = 0;
};

struct EmotionMetrics {
  double mse_arousal = 0.0;
  double mse_valence = 0.0;
  double mse_avg = 0.0;
  int count = 0;
};

struct EvalOptions {
  bool pam = true, ram = true, fused = true, emotion = true;
  Consensus consensus = Consensus::kAverage;
  bool consensus_post_squash = false;
  double fuse_w_pam = 6.0;
  double fuse_w_ram = 1.0;
  bool probe = true;
  int probe_iters = 600;
};

struct EvalReport {
  std::optional<EmotionMetrics> emotion;
  std::optional<TraitMetrics> pam, ram, fused;
  std::optional<double> probe_accuracy;
  int emotion_count = 0;
  int video_count = 0;
  std::string consensus = "average";
};

// Runs the selected inference paths over the dataset's eval split. Videos
// are evaluated on their deterministic mid-segment frames.
EvalReport evaluate_model(const Model& model, const Dataset& data, const EvalOptions& opts = {});

// Held-out accuracy of a fresh linear probe on frozen backbone features over
// a balanced mix of both eval sets. The model's own adversarially trained
// classifier is never consulted.
double probe_discriminator(const Model& model, const Dataset& data, int iters = 600);

std::string eval_report_json(const EvalReport& r);   // schema documented in README
std::string eval_report_table(const EvalReport& r);  // human-readable

// --- feature projection ------------------------------------------------

struct ProjectionRow {
  double x = 0.0, y = 0.0;
  DatasetTag tag = DatasetTag::kEmotion;
};

// Centers the rows and projects onto the top-2 principal components. Sign
// convention: the largest-magnitude loading of each component is positive.
std::vector<ProjectionRow> project_features(const Tensor& features,
                                            const std::vector<DatasetTag>& tags);

// Backbone features of both eval sets -> PCA rows (emotion first).
std::vector<ProjectionRow> export_projection(const Model& model, const Dataset& data,
                                             int max_per_set = 0);

void write_projection_csv(const std::string& path, const std::vector<ProjectionRow>& rows);

}  // namespace persemon
