// SPDX-License-Identifier: Apache-2.0
//
// Invariant suite behind `fusetrack selftest`: gradient checks of every
// differentiable op and of a small full model, attention decomposition
// equivalence, softmax and loss-weight contracts, and metric oracles.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fusetrack/tensor.hpp"

namespace fusetrack {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // the measured quantity (error, difference, ...)
  double tolerance = 0.0;  // pass threshold on `value`
  std::string detail;
};

struct SelftestOptions {
  // Applied to every block reconstruction before comparison; lets tests
  // confirm the suite notices a broken reconstruction.
  std::function<Tensor(const Tensor&)> reconstruction_fault;
};

std::vector<CheckResult> run_selftest(const SelftestOptions& options = {});

// Fixed-width table, one row per check.
std::string format_check_table(const std::vector<CheckResult>& results);

}  // namespace fusetrack
