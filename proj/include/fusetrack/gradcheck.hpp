// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking. The numeric side only ever
// evaluates the loss function forward (no tape), so it is independent of the
// recorded backward rules it checks.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fusetrack/tensor.hpp"

namespace fusetrack {

struct GradCheckResult {
  // max over inputs of ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_relative_error = 0.0;
  // same ratio over all inputs' gradients taken as one vector
  double joint_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_input = 0;
};

// `loss_fn` must build a scalar from the current values of `inputs` using
// recorded operations. Inputs are perturbed in place and restored.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                double step = 1e-5);

}  // namespace fusetrack
