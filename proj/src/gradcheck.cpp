// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fusetrack {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs, double step) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    Tape tape;
    RecordingScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }

  GradCheckResult result;
  double all_diff2 = 0.0, all_a2 = 0.0, all_n2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = loss_fn().item();
      values[i] = orig - step;
      const double down = loss_fn().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double d = analytic[i] - numeric;
      diff2 += d * d;
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      result.max_abs_error = std::max(result.max_abs_error, std::abs(d));
    }
    all_diff2 += diff2;
    all_a2 += a2;
    all_n2 += n2;
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    const double rel = denom > 0.0 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_input = k;
    }
    t.clear_grad();
  }
  const double denom = std::max(std::sqrt(all_a2), std::sqrt(all_n2));
  result.joint_relative_error = denom > 0.0 ? std::sqrt(all_diff2) / denom : std::sqrt(all_diff2);
  return result;
}

}  // namespace fusetrack
