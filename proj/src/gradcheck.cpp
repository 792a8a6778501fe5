#include "persemon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace persemon {

GradCheckReport check_gradients(const std::function<ad::Value()>& build_loss,
                                const std::vector<ad::ParamPtr>& params,
                                const GradCheckOptions& opts) {
  ad::zero_grad(params);
  ad::Value loss = build_loss();
  ad::backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ad::Param& p = *params[pi];
    TensorCheck tc;
    tc.name = p.name;

    std::vector<int64_t> coords(static_cast<size_t>(p.value.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (static_cast<int>(coords.size()) > opts.max_coords_per_tensor) {
      std::mt19937_64 rng(derive_seed(opts.seed, pi));
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(opts.max_coords_per_tensor));
    }

    for (int64_t idx : coords) {
      double saved = p.value[idx];
      p.value[idx] = saved + opts.step;
      double f_plus = build_loss().item();
      p.value[idx] = saved - opts.step;
      double f_minus = build_loss().item();
      p.value[idx] = saved;

      double numeric = (f_plus - f_minus) / (2.0 * opts.step);
      double a = analytic[pi][idx];
      double abs_err = std::abs(a - numeric);
      double denom = std::max(std::abs(a), std::abs(numeric));
      double rel_err = abs_err / std::max(denom, opts.abs_tol);
      bool ok = abs_err <= opts.abs_tol || abs_err <= opts.rel_tol * denom;

      tc.coords_checked++;
      tc.max_abs_err = std::max(tc.max_abs_err, abs_err);
      tc.max_rel_err = std::max(tc.max_rel_err, rel_err);
      if (!ok) tc.pass = false;
    }

    report.max_rel_err = std::max(report.max_rel_err, tc.max_rel_err);
    if (!tc.pass) report.pass = false;
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

}  // namespace persemon
