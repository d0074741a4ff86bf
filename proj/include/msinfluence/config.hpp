#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "msinfluence/dataset.hpp"
#include "msinfluence/influence.hpp"
#include "msinfluence/model.hpp"
#include "msinfluence/trainer.hpp"
#include "msinfluence/validation.hpp"

namespace msi {

// Run configuration: a line-oriented key=value document with [section]
// headers. Unknown sections or keys are errors. Every field carries a
// sensible default for the standard two-stage pipeline; the resolved
// configuration is hashed and embedded in all outputs.

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx
  int num_classes = 8;
  int dim = 10;
  std::uint64_t seed = 42;
  double noise_sigma = 1.2;
  double label_noise = 0.0;
  std::vector<int> pretrain_classes = {0, 1, 2, 3};
  std::vector<int> finetune_classes = {4, 5, 6, 7};
  int pretrain_per_class = 25;
  int finetune_train_per_class = 15;
  int finetune_test_per_class = 10;
  // Synthetic pool rows generated per class (0 = derived from the needs
  // above). Studies that compare pipelines with different split sizes pin
  // this so every variant draws from an identical pool.
  int pool_per_class = 0;
  // IDX ingestion (kind = idx).
  std::string idx_train_images, idx_train_labels;
  std::string idx_test_images, idx_test_labels;
  int idx_pretrain_limit = 0, idx_finetune_limit = 0, idx_test_limit = 0;
};

struct ModelConfig {
  std::vector<int> embed_dims = {8};
  std::string activation = "tanh";  // tanh | identity
  bool embed_output_activation = true;
  bool identity_pretrain_head = false;
  double l2_pretrain = 1e-2;
  double l2_finetune = 1e-3;
  std::uint64_t init_seed = 7;
};

struct TrainSection {
  std::string optimizer = "adam";  // adam | sgd | newton
  double lr = 0.05;
  int batch_size = 0;
  long max_steps = 20000;
  double grad_tol = 1e-6;
  int check_every = 20;
  std::uint64_t seed = 1;
  // Finetune-only fields.
  std::string mode = "fixed_W";  // fixed_W | update_W
  double proximal_alpha = 0.01;
};

struct SolverSection {
  double pretrain_damping = 1e-2;
  double finetune_damping = 1e-8;
  double cg_tol = 1e-6;
  int cg_max_iters = 200;
  long hessian_subsample = 1000;
  std::uint64_t subsample_seed = 17;
};

struct InfluenceSection {
  double alpha = 0.01;
  bool identity_hessian = false;
  std::string aggregation = "sum";  // sum | mean_abs (test-set aggregation)
};

struct ScenarioSection {
  std::string name = "correlation";
  int sweep_count = 0;  // pretraining examples validated (0 = all)
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double top_fraction = 0.10;
  double eps = 1e-3;
  long loo_max_steps = 100;  // warm-start retraining budget per stage
  double loo_grad_tol = 0.0; // 0 = inherit the stage's grad_tol
  std::string loo_optimizer;  // empty = inherit the stage's optimizer
  int datasize_factor = 3;
  bool per_pair = true;  // also report the per-(z, x) correlation
};

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainSection pretrain;
  TrainSection finetune;
  SolverSection solver;
  InfluenceSection influence;
  ScenarioSection scenario;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical serialization of every resolved field; re-parsing it yields an
// identical configuration.
std::string serialize_config(const RunConfig& cfg);

// FNV-1a hash of the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Pipeline assembly from a configuration.
// ---------------------------------------------------------------------------

struct Pipeline {
  std::unique_ptr<TwoStageModel> model;
  Dataset Z;     // pretraining set
  Dataset X;     // finetune training set
  Dataset test;  // finetune test set
};

Pipeline build_pipeline(const RunConfig& cfg);

TrainConfig train_config_of(const TrainSection& s);
FinetuneMode finetune_mode_of(const TrainSection& s);
InfluenceConfig influence_config_of(const RunConfig& cfg);
TruthConfig truth_config_of(const RunConfig& cfg);

}  // namespace msi
