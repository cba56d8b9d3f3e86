// SPDX-License-Identifier: Apache-2.0
//
// Ablation runners: every arm trains from the same seed on the same sample
// stream for the same number of steps, then tracks the same held-out set.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fusetrack/config.hpp"

namespace fusetrack {

enum class AblationKind { embedding, heads };
const char* ablation_name(AblationKind k);
AblationKind parse_ablation(const std::string& name);

struct ArmSpec {
  std::string name;
  ModelConfig model;
};

struct ArmResult {
  std::string name;
  std::size_t parameter_count = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;  // mean total loss over the last 10% of steps
  EvalReport report;
  std::size_t degraded_frames = 0;
  std::size_t clean_choices = 0;
  double selection_rate = 0.0;
  double train_seconds = 0.0;
};

// embedding: dual_embedding, single_embedding.
// heads: dual_selection, rgb_only, thermal_only, concat.
// The dual-embedding dual-selection arm is named "dual_selection" in both.
std::vector<ArmSpec> ablation_arms(AblationKind kind, const ModelConfig& base);

using ProgressFn = std::function<void(const std::string& arm, const TrainCurveRow& row)>;

ArmResult run_arm(const ArmSpec& arm, const RunConfig& config, const ProgressFn& progress = {});

// Arms already present in `cached` (matched by name) are reused, not retrained.
std::vector<ArmResult> run_ablation(AblationKind kind, const RunConfig& config, std::vector<ArmResult>& cached,
                                    const ProgressFn& progress = {});

std::string ablation_csv_header();
std::string ablation_csv_row(const ArmResult& r);

}  // namespace fusetrack
