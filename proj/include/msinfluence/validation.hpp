#pragma once

#include <span>
#include <string>
#include <vector>

#include "msinfluence/influence.hpp"
#include "msinfluence/trainer.hpp"

namespace msi {

// Sample Pearson correlation. Requires equal lengths >= 2 and non-zero
// variance on both sides.
double pearson_r(std::span<const double> xs, std::span<const double> ys);

struct CorrelationReport {
  // (predicted loss change for removal, measured loss change) per example.
  std::vector<std::pair<double, double>> pairs;
  double pearson = 0.0;
  std::string scenario;
  std::string config_hash;
};

// Retraining budgets for the ground-truth oracles. Both stages warm-start
// from the original converged checkpoints and run a bounded number of steps.
struct TruthConfig {
  TrainConfig pretrain;
  TrainConfig finetune;
  double eps = 1e-3;  // epsilon-perturbation half-width
};

// Ground-truth oracles for one trained pipeline: retrains under perturbed
// example weights and measures the summed finetune test loss.
class Validator {
 public:
  Validator(const TwoStageModel& model, const Dataset& Z, const Dataset& X, const Dataset& test,
            const Checkpoint& pretrain_ckpt, const Checkpoint& finetune_ckpt, FinetuneMode mode,
            TruthConfig cfg);

  // Retrains both stages with w_z = 0 (warm-started, budgeted) and returns
  // sum over the test set of f_new(x) - f_orig(x).
  double loo_truth(long z_id) const;

  // Central difference of the summed test loss with respect to the epsilon
  // perturbation of z: weights w_z = 1 + m*(+-eps).
  double epsilon_truth(long z_id, double eps) const;
  double epsilon_truth(long z_id) const { return epsilon_truth(z_id, cfg_.eps); }

  double base_test_loss() const { return base_test_loss_; }

  // Test loss after retraining both stages with the given pretraining
  // weights (the machinery behind both oracles; also used by the cleansing
  // study, which retrains from scratch instead of warm-starting).
  double retrained_test_loss(std::span<const double> weights, bool warm_start) const;

  // Per-test-example variant, for per-pair correlation reports.
  std::vector<double> retrained_test_losses(std::span<const double> weights,
                                            bool warm_start) const;

  // (summed test loss, accuracy) after retraining; the cleansing study's
  // measurement.
  std::pair<double, double> retrained_loss_and_accuracy(std::span<const double> weights,
                                                        bool warm_start) const;

  std::vector<double> base_test_losses() const;

 private:
  const TwoStageModel* model_;
  const Dataset* pretrain_data_;
  const Dataset* finetune_data_;
  const Dataset* test_data_;
  const Checkpoint* pretrain_ckpt_;
  const Checkpoint* finetune_ckpt_;
  FinetuneMode mode_;
  TruthConfig cfg_;
  double base_test_loss_ = 0.0;
};

}  // namespace msi
