#pragma once

// Central finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <string>

#include "sono/nn/tensor.hpp"

namespace sono::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_coord = -1;
  int coords_checked = 0;

  bool pass(double tolerance) const { return max_rel_err < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  int max_coords = 10000;  // checked coordinates; above this a random subsample
  std::uint64_t seed = 7;
};

// `loss` evaluates the scalar objective at the current parameter values;
// `compute_grads` must fill every gradient buffer in `params` (typically
// zero_grads + forward + backward).  Both are called repeatedly.
GradCheckReport grad_check(ParamSet& params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           const GradCheckOptions& opts = {});

}  // namespace sono::nn
