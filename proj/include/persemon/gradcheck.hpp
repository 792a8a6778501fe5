#pragma once

#include <functional>
#include <string>
#include <vector>

#include "persemon/autodiff.hpp"

namespace persemon {

struct GradCheckOptions {
  double step = 1e-4;     // central-difference half step
  double rel_tol = 1e-4;
  double abs_tol = 1e-3;  // allowance for near-zero gradients
  int max_coords_per_tensor = 64;
  uint64_t seed = 0;      // coordinate subsampling
};

struct TensorCheck {
  std::string name;
  int coords_checked = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;  // |analytic-numeric| / max(|analytic|,|numeric|,abs_tol)
  bool pass = true;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_err = 0.0;
  bool pass = true;
};

// Compares backward() gradients on `params` against central finite
// differences of the loss built by `build_loss` (re-invoked per probe, so it
// must be a pure function of the current param values).
GradCheckReport check_gradients(const std::function<ad::Value()>& build_loss,
                                const std::vector<ad::ParamPtr>& params,
                                const GradCheckOptions& opts = {});

}  // namespace persemon
