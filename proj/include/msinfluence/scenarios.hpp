#pragma once

#include <map>
#include <string>
#include <vector>

#include "msinfluence/config.hpp"

namespace msi {

// End-to-end study result: tabular rows for CSV emission plus a small map of
// headline metrics that the acceptance suite asserts on.
struct ScenarioOutcome {
  std::string name;
  std::string config_hash;
  std::vector<std::string> csv_header;
  std::vector<std::vector<std::string>> csv_rows;
  std::map<std::string, double> metrics;
  CorrelationReport correlation;  // populated by the correlation-style studies
};

// Runs the study named in cfg.scenario.name:
//   correlation — per-pretraining-example predicted vs measured loss change
//                 (leave-one-out retraining), Pearson r.
//   ablation    — correlation study computed twice, with and without the
//                 inverse Hessians (identity replacement), sharing one truth
//                 sweep.
//   cleansing   — remove the top-scored fraction of pretraining data,
//                 retrain, compare against random removal, per seed.
//   similarity  — mean |score| when the finetune task equals the pretrain
//                 task vs a disjoint task, per seed.
//   datasize    — mean |score| with n vs factor*n finetuning examples (and
//                 proportionally more steps), per seed.
ScenarioOutcome run_scenario(const RunConfig& cfg);

// Named desk-scale configurations used by the validation studies and tests.
RunConfig preset_convex_correlation(int pretrain_per_class);  // 25 -> m=100, 50 -> m=200
RunConfig preset_mlp_correlation();
RunConfig preset_case2_convex();
RunConfig preset_cleansing();
RunConfig preset_similarity();
RunConfig preset_datasize();

}  // namespace msi
