#include "persemon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace persemon {

using nlohmann::json;

double mean_accuracy(const std::vector<double>& labels, const std::vector<double>& preds) {
  if (labels.empty()) throw ContractError("mean_accuracy on empty input");
  if (labels.size() != preds.size())
    throw ContractError("mean_accuracy: size mismatch " + std::to_string(labels.size()) + " vs " +
                        std::to_string(preds.size()));
  double mae = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) mae += std::abs(labels[i] - preds[i]);
  return 1.0 - mae / static_cast<double>(labels.size());
}

std::optional<double> r_squared(const std::vector<double>& labels,
                                const std::vector<double>& preds) {
  if (labels.size() != preds.size()) throw ContractError("r_squared: size mismatch");
  if (labels.size() < 2) throw ContractError("r_squared needs at least 2 samples");
  double mean = 0.0;
  for (double v : labels) mean += v;
  mean /= static_cast<double>(labels.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    ss_res += (labels[i] - preds[i]) * (labels[i] - preds[i]);
    ss_tot += (labels[i] - mean) * (labels[i] - mean);
  }
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - ss_res / ss_tot;
}

double mse(const std::vector<double>& labels, const std::vector<double>& preds) {
  if (labels.empty()) throw ContractError("mse on empty input");
  if (labels.size() != preds.size()) throw ContractError("mse: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) acc += (labels[i] - preds[i]) * (labels[i] - preds[i]);
  return acc / static_cast<double>(labels.size());
}

// --- linear probe -----------------------------------------------------------

void LinearProbe::fit(const Tensor& x, const std::vector<int>& y, int iters, double lr,
                      double momentum) {
  check_shape(x.rank() == 2, "LinearProbe::fit expects [N,D]");
  int n = x.dim(0), d = x.dim(1);
  if (n != static_cast<int>(y.size())) throw ContractError("LinearProbe: label count mismatch");
  if (n < 2) throw ContractError("LinearProbe needs at least 2 samples");

  mean = Tensor({d});
  stddev = Tensor({d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += x[static_cast<int64_t>(i) * d + j];
  for (int j = 0; j < d; ++j) mean[j] /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double c = x[static_cast<int64_t>(i) * d + j] - mean[j];
      stddev[j] += c * c;
    }
  for (int j = 0; j < d; ++j) stddev[j] = std::max(std::sqrt(stddev[j] / n), 1e-8);

  Tensor z({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      z[static_cast<int64_t>(i) * d + j] =
          (x[static_cast<int64_t>(i) * d + j] - mean[j]) / stddev[j];

  weights = Tensor({d + 1});
  Tensor vel({d + 1});
  Tensor grad({d + 1});
  for (int it = 0; it < iters; ++it) {
    grad.fill(0.0);
    for (int i = 0; i < n; ++i) {
      const double* row = z.data() + static_cast<int64_t>(i) * d;
      double acc = weights[d];
      for (int j = 0; j < d; ++j) acc += weights[j] * row[j];
      double p = 1.0 / (1.0 + std::exp(-acc));
      double err = p - y[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j) grad[j] += err * row[j];
      grad[d] += err;
    }
    for (int j = 0; j <= d; ++j) {
      vel[j] = momentum * vel[j] + grad[j] / n;
      weights[j] -= lr * vel[j];
    }
  }
}

double LinearProbe::decision(const double* row) const {
  int d = mean.dim(0);
  double acc = weights[d];
  for (int j = 0; j < d; ++j) acc += weights[j] * (row[j] - mean[j]) / stddev[j];
  return acc;
}

double LinearProbe::accuracy(const Tensor& x, const std::vector<int>& y) const {
  int n = x.dim(0), d = x.dim(1);
  if (n != static_cast<int>(y.size())) throw ContractError("LinearProbe: label count mismatch");
  int hit = 0;
  for (int i = 0; i < n; ++i) {
    int pred = decision(x.data() + static_cast<int64_t>(i) * d) > 0.0 ? 1 : 0;
    if (pred == y[static_cast<size_t>(i)]) ++hit;
  }
  return static_cast<double>(hit) / n;
}

// --- model evaluation ---------------------------------------------------

namespace {

TraitMetrics trait_metrics(const std::vector<std::array<double, 5>>& labels,
                           const std::vector<std::array<double, 5>>& preds) {
  TraitMetrics tm;
  tm.count = static_cast<int>(labels.size());
  bool all_r2 = true;
  double r2_sum = 0.0;
  for (int t = 0; t < 5; ++t) {
    std::vector<double> l, p;
    for (size_t i = 0; i < labels.size(); ++i) {
      l.push_back(labels[i][static_cast<size_t>(t)]);
      p.push_back(preds[i][static_cast<size_t>(t)]);
    }
    tm.mse_per_trait[static_cast<size_t>(t)] = mse(l, p);
    tm.a_per_trait[static_cast<size_t>(t)] = mean_accuracy(l, p);
    tm.r2_per_trait[static_cast<size_t>(t)] = r_squared(l, p);
    tm.mse_avg += tm.mse_per_trait[static_cast<size_t>(t)] / 5.0;
    tm.a_avg += tm.a_per_trait[static_cast<size_t>(t)] / 5.0;
    if (tm.r2_per_trait[static_cast<size_t>(t)])
      r2_sum += *tm.r2_per_trait[static_cast<size_t>(t)] / 5.0;
    else
      all_r2 = false;
  }
  if (all_r2) tm.r2_avg = r2_sum;
  return tm;
}

// Features of the mid-segment frames of every video, video-major: [V*K, D].
Tensor video_eval_features(const Model& model, const std::vector<SyntheticVideo>& videos) {
  std::vector<const SyntheticSample*> frames;
  for (const SyntheticVideo& v : videos)
    for (int idx : midpoint_sample_indices(v)) frames.push_back(&v.frames[static_cast<size_t>(idx)]);
  return model.fem_forward(stack_images(frames));
}

Tensor slice_rows_tensor(const Tensor& t, int start, int count) {
  int cols = t.dim(1);
  Tensor out({count, cols});
  std::copy_n(t.data() + static_cast<int64_t>(start) * cols, static_cast<int64_t>(count) * cols,
              out.data());
  return out;
}

}  // namespace

EvalReport evaluate_model(const Model& model, const Dataset& data, const EvalOptions& opts) {
  EvalReport report;
  report.consensus = opts.consensus == Consensus::kAverage ? "average" : "max";
  report.emotion_count = static_cast<int>(data.emotion_eval.size());
  report.video_count = static_cast<int>(data.videos_eval.size());

  if (opts.emotion) {
    if (data.emotion_eval.empty()) throw ConfigError("emotion path needs a non-empty eval set");
    std::vector<const SyntheticSample*> ptrs;
    for (const auto& s : data.emotion_eval) ptrs.push_back(&s);
    Tensor feats = model.fem_forward(stack_images(ptrs));
    Tensor scores = model.eam_forward(feats);
    std::vector<double> la, pa, lv, pv;
    for (size_t i = 0; i < ptrs.size(); ++i) {
      la.push_back(ptrs[i]->arousal);
      lv.push_back(ptrs[i]->valence);
      pa.push_back(scores[static_cast<int64_t>(i) * 2]);
      pv.push_back(scores[static_cast<int64_t>(i) * 2 + 1]);
    }
    EmotionMetrics em;
    em.count = static_cast<int>(ptrs.size());
    em.mse_arousal = mse(la, pa);
    em.mse_valence = mse(lv, pv);
    em.mse_avg = 0.5 * (em.mse_arousal + em.mse_valence);
    report.emotion = em;
  }

  bool needs_videos = opts.pam || opts.ram || opts.fused;
  if (needs_videos) {
    if (data.videos_eval.empty()) throw ConfigError("personality paths need a non-empty eval set");
    const auto& videos = data.videos_eval;
    int k = static_cast<int>(videos[0].segments.size());
    Tensor feats = video_eval_features(model, videos);
    std::vector<std::array<double, 5>> labels, pam_preds, ram_preds, fused_preds;
    for (size_t v = 0; v < videos.size(); ++v) {
      labels.push_back(videos[v].traits);
      Tensor vf = slice_rows_tensor(feats, static_cast<int>(v) * k, k);
      std::array<double, 5> pam_traits{}, ram_traits{};
      if (opts.pam || opts.fused)
        pam_traits = model.pam_forward(vf, opts.consensus, opts.consensus_post_squash).video_traits;
      if (opts.ram || opts.fused)
        ram_traits = model.ram_forward(model.eam_forward(vf), opts.consensus);
      if (opts.pam || opts.fused) pam_preds.push_back(pam_traits);
      if (opts.ram || opts.fused) ram_preds.push_back(ram_traits);
      if (opts.fused)
        fused_preds.push_back(fuse_pam_ram(pam_traits, ram_traits, opts.fuse_w_pam, opts.fuse_w_ram));
    }
    if (opts.pam) report.pam = trait_metrics(labels, pam_preds);
    if (opts.ram) report.ram = trait_metrics(labels, ram_preds);
    if (opts.fused) report.fused = trait_metrics(labels, fused_preds);
  }

  if (opts.probe) report.probe_accuracy = probe_discriminator(model, data, opts.probe_iters);
  return report;
}

double probe_discriminator(const Model& model, const Dataset& data, int iters) {
  // Balanced frame pools from both eval sets.
  std::vector<const SyntheticSample*> emo, per;
  for (const auto& s : data.emotion_eval) emo.push_back(&s);
  for (const auto& v : data.videos_eval)
    for (const auto& f : v.frames) per.push_back(&f);
  int n = static_cast<int>(std::min(emo.size(), per.size()));
  if (n < 4) throw ContractError("probe_discriminator needs at least 4 frames per set");
  emo.resize(static_cast<size_t>(n));
  per.resize(static_cast<size_t>(n));

  std::vector<const SyntheticSample*> all;
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    all.push_back(emo[static_cast<size_t>(i)]);
    labels.push_back(0);
    all.push_back(per[static_cast<size_t>(i)]);
    labels.push_back(1);
  }
  Tensor feats = model.fem_forward(stack_images(all));

  // Alternating split keeps both halves balanced.
  int d = feats.dim(1);
  int total = feats.dim(0);
  int n_train = total / 2, n_test = total - n_train;
  Tensor xtr({n_train, d}), xte({n_test, d});
  std::vector<int> ytr, yte;
  int tr = 0, te = 0;
  for (int i = 0; i < total; ++i) {
    if (i % 2 == 0) {
      std::copy_n(feats.data() + static_cast<int64_t>(i) * d, d,
                  xtr.data() + static_cast<int64_t>(tr++) * d);
      ytr.push_back(labels[static_cast<size_t>(i)]);
    } else {
      std::copy_n(feats.data() + static_cast<int64_t>(i) * d, d,
                  xte.data() + static_cast<int64_t>(te++) * d);
      yte.push_back(labels[static_cast<size_t>(i)]);
    }
  }
  if (ytr.size() < 2 || std::count(ytr.begin(), ytr.end(), 1) == 0 ||
      std::count(ytr.begin(), ytr.end(), 0) == 0)
    throw ContractError("probe_discriminator: single-class probe split");
  LinearProbe probe;
  probe.fit(xtr, ytr, iters);
  return probe.accuracy(xte, yte);
}

// --- report serialization ---------------------------------------------------

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

json trait_metrics_json(const TraitMetrics& tm) {
  static const char* kTraits[5] = {"extraversion", "agreeableness", "conscientiousness",
                                   "neuroticism", "openness"};
  json per = json::object();
  for (int t = 0; t < 5; ++t)
    per[kTraits[t]] = json{{"mse", tm.mse_per_trait[static_cast<size_t>(t)]},
                           {"A", tm.a_per_trait[static_cast<size_t>(t)]},
                           {"r2", opt_to_json(tm.r2_per_trait[static_cast<size_t>(t)])}};
  return json{{"per_trait", per},
              {"mse", tm.mse_avg},
              {"A", tm.a_avg},
              {"r2", opt_to_json(tm.r2_avg)},
              {"r2_defined", tm.r2_avg.has_value()},
              {"count", tm.count}};
}

}  // namespace

std::string eval_report_json(const EvalReport& r) {
  json j{{"counts", {{"emotion_eval", r.emotion_count}, {"videos_eval", r.video_count}}},
         {"consensus", r.consensus}};
  if (r.emotion)
    j["emotion"] = json{{"mse_arousal", r.emotion->mse_arousal},
                        {"mse_valence", r.emotion->mse_valence},
                        {"mse", r.emotion->mse_avg},
                        {"count", r.emotion->count}};
  if (r.pam) j["pam"] = trait_metrics_json(*r.pam);
  if (r.ram) j["ram"] = trait_metrics_json(*r.ram);
  if (r.fused) j["fused"] = trait_metrics_json(*r.fused);
  if (r.probe_accuracy) j["probe_accuracy"] = *r.probe_accuracy;
  return j.dump(2);
}

std::string eval_report_table(const EvalReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  if (r.emotion)
    os << "emotion    mse=" << r.emotion->mse_avg << " (arousal " << r.emotion->mse_arousal
       << ", valence " << r.emotion->mse_valence << ", n=" << r.emotion->count << ")\n";
  auto row = [&os](const char* name, const TraitMetrics& tm) {
    os << name << " mse=" << tm.mse_avg << " A=" << tm.a_avg;
    if (tm.r2_avg)
      os << " R2=" << *tm.r2_avg;
    else
      os << " R2=undefined";
    os << " (n=" << tm.count << ")\n";
  };
  if (r.pam) row("pam       ", *r.pam);
  if (r.ram) row("ram       ", *r.ram);
  if (r.fused) row("fused     ", *r.fused);
  if (r.probe_accuracy) os << "probe_accuracy=" << *r.probe_accuracy << "\n";
  return os.str();
}

// --- PCA projection -----------------------------------------------------

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major d x d).
// a is destroyed; eigenvectors come out as columns of v.
void jacobi_eigen(std::vector<double>& a, int d, std::vector<double>& eigvals,
                  std::vector<double>& v) {
  v.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
  auto at = [&a, d](int r, int c) -> double& { return a[static_cast<size_t>(r) * d + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += at(p, q) * at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < d; ++i) {
          double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          double api = at(p, i), aqi = at(q, i);
          at(p, i) = c * api - s * aqi;
          at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          double vip = v[static_cast<size_t>(i) * d + p], viq = v[static_cast<size_t>(i) * d + q];
          v[static_cast<size_t>(i) * d + p] = c * vip - s * viq;
          v[static_cast<size_t>(i) * d + q] = s * vip + c * viq;
        }
      }
  }
  eigvals.resize(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) eigvals[static_cast<size_t>(i)] = at(i, i);
}

}  // namespace

std::vector<ProjectionRow> project_features(const Tensor& features,
                                            const std::vector<DatasetTag>& tags) {
  check_shape(features.rank() == 2, "project_features expects [N,D]");
  int n = features.dim(0), d = features.dim(1);
  if (n < 2) throw ContractError("project_features needs at least 2 samples");
  if (tags.size() != static_cast<size_t>(n))
    throw ContractError("project_features: tag count mismatch");

  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += features[static_cast<int64_t>(i) * d + j];
  for (double& m : mean) m /= n;

  std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double cj = features[static_cast<int64_t>(i) * d + j] - mean[static_cast<size_t>(j)];
      for (int l = j; l < d; ++l) {
        double cl = features[static_cast<int64_t>(i) * d + l] - mean[static_cast<size_t>(l)];
        cov[static_cast<size_t>(j) * d + l] += cj * cl;
      }
    }
  for (int j = 0; j < d; ++j)
    for (int l = 0; l < j; ++l) cov[static_cast<size_t>(j) * d + l] = cov[static_cast<size_t>(l) * d + j];
  for (double& c : cov) c /= (n - 1);

  std::vector<double> eigvals, eigvecs;
  jacobi_eigen(cov, d, eigvals, eigvecs);

  // Top-2 components by eigenvalue, deterministic tie-break on index.
  std::vector<int> order(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&eigvals](int a, int b) {
    return eigvals[static_cast<size_t>(a)] > eigvals[static_cast<size_t>(b)];
  });

  std::array<std::vector<double>, 2> comp;
  for (int c = 0; c < 2; ++c) {
    comp[static_cast<size_t>(c)].resize(static_cast<size_t>(d));
    int col = order[static_cast<size_t>(c)];
    int arg = 0;
    double best = 0.0;
    for (int j = 0; j < d; ++j) {
      double v = eigvecs[static_cast<size_t>(j) * d + col];
      comp[static_cast<size_t>(c)][static_cast<size_t>(j)] = v;
      if (std::abs(v) > best) {
        best = std::abs(v);
        arg = j;
      }
    }
    if (comp[static_cast<size_t>(c)][static_cast<size_t>(arg)] < 0.0)
      for (double& v : comp[static_cast<size_t>(c)]) v = -v;
  }

  std::vector<ProjectionRow> rows(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double px = 0.0, py = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = features[static_cast<int64_t>(i) * d + j] - mean[static_cast<size_t>(j)];
      px += c * comp[0][static_cast<size_t>(j)];
      py += c * comp[1][static_cast<size_t>(j)];
    }
    rows[static_cast<size_t>(i)] = {px, py, tags[static_cast<size_t>(i)]};
  }
  return rows;
}

std::vector<ProjectionRow> export_projection(const Model& model, const Dataset& data,
                                             int max_per_set) {
  std::vector<const SyntheticSample*> all;
  std::vector<DatasetTag> tags;
  int n_emo = static_cast<int>(data.emotion_eval.size());
  if (max_per_set > 0) n_emo = std::min(n_emo, max_per_set);
  for (int i = 0; i < n_emo; ++i) {
    all.push_back(&data.emotion_eval[static_cast<size_t>(i)]);
    tags.push_back(DatasetTag::kEmotion);
  }
  int taken = 0;
  for (const auto& v : data.videos_eval) {
    for (const auto& f : v.frames) {
      if (max_per_set > 0 && taken >= max_per_set) break;
      all.push_back(&f);
      tags.push_back(DatasetTag::kPersonality);
      ++taken;
    }
    if (max_per_set > 0 && taken >= max_per_set) break;
  }
  if (all.size() < 2) throw ContractError("export_projection needs at least 2 samples");
  Tensor feats = model.fem_forward(stack_images(all));
  return project_features(feats, tags);
}

void write_projection_csv(const std::string& path, const std::vector<ProjectionRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write projection csv: " + path);
  f << "x,y,tag\n";
  f.precision(17);
  for (const ProjectionRow& r : rows)
    f << r.x << "," << r.y << "," << (r.tag == DatasetTag::kEmotion ? "EMOTION" : "PERSONALITY")
      << "\n";
}

}  // namespace persemon
