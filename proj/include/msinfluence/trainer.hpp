#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msinfluence/dataset.hpp"
#include "msinfluence/model.hpp"
#include "msinfluence/objective.hpp"

namespace msi {

enum class OptimizerKind { Sgd, Adam, Newton };
enum class Stage : std::uint8_t { Pretrain = 0, Finetune = 1 };
enum class FinetuneMode : std::uint8_t { None = 0, FixedW = 1, UpdateW = 2 };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 0.05;
  int batch_size = 0;  // 0 = full batch
  long max_steps = 20000;
  double grad_tol = 1e-6;  // on the full-objective gradient norm
  int check_every = 20;
  std::uint64_t seed = 1;
  double proximal_alpha = 0.0;  // > 0 adds alpha*|W - Wbar|^2 in update_W mode
};

struct Checkpoint {
  ParamVector params;
  double objective_value = 0.0;
  double grad_norm = 0.0;  // of the full objective at `params`
  std::string config_hash;
  Stage stage = Stage::Pretrain;
  FinetuneMode mode = FinetuneMode::None;
  double proximal_alpha = 0.0;  // tether strength the finetune stage was trained with
  bool converged = false;
  long steps = 0;
};

// Minimizes the weighted pretraining objective (1/m) sum_i w_i g(z_i).
// Uniform weights reproduce G; w_z = 0 is leave-one-out; w_z = 1 + m*eps is
// the epsilon-perturbation. Starts from `warm_start` when given, otherwise
// from the model's seeded initialization.
Checkpoint train_pretrain(const TwoStageModel& model, const Dataset& Z, const TrainConfig& cfg,
                          std::span<const double> weights = {},
                          const ParamVector* warm_start = nullptr);

// Finetuning. fixed_W optimizes Theta with W bit-identical to start's W.
// update_W optimizes (W, Theta) from start's W; with cfg.proximal_alpha > 0
// the objective gains alpha*|W - Wbar|^2 where Wbar is start's W. When
// `warm_init` is given, the trained segments start from it instead (used by
// the leave-one-out protocol, which re-finetunes from the original
// finetuned weights while W-fixed values and the tether come from the new
// pretraining solution).
Checkpoint train_finetune(const TwoStageModel& model, const Dataset& X, const Checkpoint& start,
                          FinetuneMode mode, const TrainConfig& cfg,
                          const ParamVector* warm_init = nullptr);

// Shared engine: minimizes an arbitrary objective over its wrt segments.
Checkpoint minimize(const Objective& objective, const ParamVector& init, const TrainConfig& cfg,
                    Stage stage, FinetuneMode mode);

}  // namespace msi
