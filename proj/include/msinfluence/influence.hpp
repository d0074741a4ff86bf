#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "msinfluence/solver.hpp"
#include "msinfluence/trainer.hpp"

namespace msi {

struct InfluenceConfig {
  // Default damping: pretraining Hessians are summed over many examples
  // and tolerate a larger shift than the finetune-stage systems.
  SolverConfig pretrain_solver{1e-2, 1e-6, 200, 0, 17};
  SolverConfig finetune_solver{1e-8, 1e-6, 200, 0, 17};
  double alpha = 0.01;           // proximal constant for the updated-embedding case
  bool identity_hessian = false; // ablation: both IHVPs replaced by identity
};

// One scored (pretraining example, test example) pair. x_id = -1 means the
// score was aggregated over the whole test group.
struct InfluenceRecord {
  long z_id = 0;
  long x_id = 0;
  double score = 0.0;
  FinetuneMode mode = FinetuneMode::None;
  SolveReport finetune_report;  // finetune-Hessian IHVP
  SolveReport pretrain_report;  // pretrain-Hessian IHVP
};

// Multi-stage influence scores. Positive score means adding weight to the
// pretraining example increases the test loss (the score is the derivative
// of the test loss with respect to the epsilon-perturbation of that
// example's share of the pretraining objective); removal corresponds to
// epsilon = -1/m, so the predicted loss change for leaving z out is
// -(1/m) * score.
//
// The per-test-point inverse-Hessian-vector products are computed once and
// cached, so sweeping the whole pretraining set costs one gradient per
// additional example. The cache is filled on first use and is safe for
// concurrent readers afterwards.
class InfluenceEngine {
 public:
  InfluenceEngine(const TwoStageModel& model, const Dataset& Z, const Dataset& X,
                  const Checkpoint& pretrain_ckpt, const Checkpoint& finetune_ckpt,
                  InfluenceConfig cfg);

  // I_{z,(W,U)} = -[HG^-1 * dg(z)/d(W,U)]: the first-order response of the
  // pretrained parameters to upweighting z. Returns the full (W, U) vector;
  // its W slice is the quantity the two-stage formulas consume.
  std::pair<std::vector<double>, SolveReport> influence_z_w(long z_id) const;

  // Case 1 (embedding fixed in finetuning), amortized per test point. After
  // the shared IHVPs are in place the per-example scoring is independent, so
  // it fans out over `jobs` threads; results are position-stable and
  // identical for any job count.
  std::vector<InfluenceRecord> influence_fixed(std::span<const long> z_ids, const Dataset& test,
                                               std::span<const long> x_ids, int jobs = 1);

  // Case 2 (embedding updated, proximal approximation), amortized per test
  // point via the symmetry of the block system.
  std::vector<InfluenceRecord> influence_updated(std::span<const long> z_ids, const Dataset& test,
                                                 std::span<const long> x_ids, int jobs = 1);

  // Case 2 exactly as the derivation is written: per z, one pretrain IHVP
  // feeding the damped (Theta, W) block solve, then the dot product with the
  // test gradient. Quadratic in practice; kept as the cross-check route.
  InfluenceRecord influence_updated_direct(long z_id, const Dataset& test, long x_id);

  // Sum of all pairwise scores over a block of pretraining examples and test
  // examples, amortizing the per-test-point IHVPs.
  double group_influence(std::span<const long> z_ids, const Dataset& test,
                         std::span<const long> x_ids, FinetuneMode mode);

  const std::vector<std::string>& warnings() const { return warnings_; }
  const InfluenceConfig& config() const { return cfg_; }

  // Gradient of g at the pretraining optimum for one example, over (W, U).
  std::vector<double> pretrain_example_grad(long z_id) const;

 private:
  struct CachedTestVectors {
    std::vector<double> v2;  // pretrain-space vector dotted against dg(z)
    SolveReport finetune_report;
    SolveReport pretrain_report;
  };

  const CachedTestVectors& test_vectors_fixed(const Dataset& test, long x_id);
  const CachedTestVectors& test_vectors_updated(const Dataset& test, long x_id);
  void bind_test_set(const Dataset& test);
  ad::Batch single_example(const Dataset& ds, long id) const;

  const TwoStageModel* model_;
  const Dataset* pretrain_data_;
  const Dataset* finetune_data_;
  const Checkpoint* pretrain_ckpt_;
  const Checkpoint* finetune_ckpt_;
  InfluenceConfig cfg_;

  std::vector<std::string> pretrain_wrt_;  // (W, U)
  std::vector<std::string> joint_wrt_;     // (Theta, W)
  Objective pretrain_objective_;
  Objective finetune_objective_;        // finetune training loss over X
  Objective finetune_objective_prox_;   // plus the 2-alpha tether (case 2 system)

  HvpOracle pretrain_hvp_;
  HvpOracle finetune_theta_hvp_;  // case 1: d2F/dTheta2
  HvpOracle joint_hvp_;           // case 2: block system over (Theta, W)

  const Dataset* test_data_ = nullptr;  // cache key scope
  std::map<long, CachedTestVectors> fixed_cache_;
  std::map<long, CachedTestVectors> updated_cache_;
  std::vector<std::string> warnings_;
  bool alpha_warned_ = false;
};

}  // namespace msi
