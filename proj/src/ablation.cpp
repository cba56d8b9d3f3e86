// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/ablation.hpp"

#include <chrono>
#include <cstdio>

namespace fusetrack {

const char* ablation_name(AblationKind k) { return k == AblationKind::embedding ? "embedding" : "heads"; }

AblationKind parse_ablation(const std::string& name) {
  if (name == "embedding") return AblationKind::embedding;
  if (name == "heads") return AblationKind::heads;
  throw ContractError("unknown ablation '" + name + "' (expected embedding or heads)");
}

std::vector<ArmSpec> ablation_arms(AblationKind kind, const ModelConfig& base) {
  ModelConfig dual = base;
  dual.embedding.dual = true;
  dual.variant = HeadVariant::dual_selection;
  std::vector<ArmSpec> arms{{"dual_selection", dual}};
  if (kind == AblationKind::embedding) {
    ModelConfig single = dual;
    single.embedding.dual = false;
    arms.push_back({"single_embedding", single});
  } else {
    for (auto v : {HeadVariant::rgb_only, HeadVariant::thermal_only, HeadVariant::concat}) {
      ModelConfig m = dual;
      m.variant = v;
      arms.push_back({variant_name(v), m});
    }
  }
  return arms;
}

ArmResult run_arm(const ArmSpec& arm, const RunConfig& config, const ProgressFn& progress) {
  RunConfig c = config;
  c.model = arm.model;
  auto model = make_model(c);
  auto source = make_training_source(c);
  Trainer trainer(model, c.train);

  const auto t0 = std::chrono::steady_clock::now();
  const auto curve = trainer.run(source, [&](const TrainCurveRow& row) {
    if (progress) progress(arm.name, row);
  });
  ArmResult r;
  r.name = arm.name;
  r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.parameter_count = trainer.parameters().element_count();
  r.steps = curve.size();
  if (!curve.empty()) {
    const auto tail = std::max<std::size_t>(1, curve.size() / 10);
    for (std::size_t i = curve.size() - tail; i < curve.size(); ++i) r.final_loss += curve[i].total;
    r.final_loss /= static_cast<double>(tail);
  }

  HeldOutSpec held = c.eval.held_out;
  held.scene = c.data.scene;
  const auto set = make_held_out_set(held);
  const auto e = evaluate_set(model, set, c.track_options());
  r.report = e.report;
  r.degraded_frames = e.degraded_frames;
  r.clean_choices = e.clean_choices;
  r.selection_rate = e.selection_rate();
  return r;
}

std::vector<ArmResult> run_ablation(AblationKind kind, const RunConfig& config, std::vector<ArmResult>& cached,
                                    const ProgressFn& progress) {
  std::vector<ArmResult> out;
  for (const auto& arm : ablation_arms(kind, config.model)) {
    auto it = std::find_if(cached.begin(), cached.end(), [&](const ArmResult& r) { return r.name == arm.name; });
    if (it == cached.end()) {
      cached.push_back(run_arm(arm, config, progress));
      it = cached.end() - 1;
    }
    out.push_back(*it);
  }
  return out;
}

std::string ablation_csv_header() {
  return "arm,parameters,steps,final_loss,pr,sr,mpr,msr,degraded_frames,clean_choices,selection_rate,train_seconds";
}

std::string ablation_csv_row(const ArmResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%zu,%.6f,%.1f", r.name.c_str(),
                r.parameter_count, r.steps, r.final_loss, r.report.pr, r.report.sr, r.report.mpr, r.report.msr,
                r.degraded_frames, r.clean_choices, r.selection_rate, r.train_seconds);
  return buf;
}

}  // namespace fusetrack
