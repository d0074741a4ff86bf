#include "msinfluence/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "msinfluence/common.hpp"

namespace msi {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct TrainedPipeline {
  Pipeline pipe;
  Checkpoint pretrain;
  Checkpoint finetune;
  FinetuneMode mode = FinetuneMode::FixedW;
  std::string hash;
};

TrainedPipeline train_pipeline(const RunConfig& cfg) {
  TrainedPipeline t;
  t.pipe = build_pipeline(cfg);
  t.mode = finetune_mode_of(cfg.finetune);
  t.hash = config_hash(cfg);
  t.pretrain = train_pretrain(*t.pipe.model, t.pipe.Z, train_config_of(cfg.pretrain));
  t.pretrain.config_hash = t.hash;
  t.finetune =
      train_finetune(*t.pipe.model, t.pipe.X, t.pretrain, t.mode, train_config_of(cfg.finetune));
  t.finetune.config_hash = t.hash;
  return t;
}

RunConfig with_seed_offset(RunConfig cfg, std::uint64_t s) {
  cfg.dataset.seed += s;
  cfg.model.init_seed += s;
  cfg.pretrain.seed += s;
  cfg.finetune.seed += s;
  return cfg;
}

std::vector<long> id_range(int n) {
  std::vector<long> ids(n);
  std::iota(ids.begin(), ids.end(), 0L);
  return ids;
}

std::vector<InfluenceRecord> score_all(InfluenceEngine& engine, const Dataset& test,
                                       std::span<const long> z_ids, std::span<const long> x_ids,
                                       FinetuneMode mode) {
  return mode == FinetuneMode::FixedW ? engine.influence_fixed(z_ids, test, x_ids)
                                      : engine.influence_updated(z_ids, test, x_ids);
}

// Per-pretraining-example score summed over the test group, the protocol
// for whole-test-set attribution.
std::vector<double> summed_scores(const std::vector<InfluenceRecord>& records, int n_z,
                                  int n_x) {
  std::vector<double> sums(n_z, 0.0);
  for (int zi = 0; zi < n_z; ++zi) {
    for (int xi = 0; xi < n_x; ++xi) {
      sums[zi] += records[static_cast<std::size_t>(zi) * n_x + xi].score;
    }
  }
  return sums;
}

double mean_abs(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += std::fabs(x);
  return s / static_cast<double>(xs.size());
}

double mean_abs_summed_score(const RunConfig& cfg, const TrainedPipeline& tp) {
  InfluenceEngine engine(*tp.pipe.model, tp.pipe.Z, tp.pipe.X, tp.pretrain, tp.finetune,
                         influence_config_of(cfg));
  const std::vector<long> z_ids = id_range(tp.pipe.Z.size());
  const std::vector<long> x_ids = id_range(tp.pipe.test.size());
  auto records = score_all(engine, tp.pipe.test, z_ids, x_ids, tp.mode);
  auto sums = summed_scores(records, tp.pipe.Z.size(), tp.pipe.test.size());
  return mean_abs(sums);
}

ScenarioOutcome correlation_like(const RunConfig& cfg, bool with_ablation) {
  ScenarioOutcome out;
  out.name = with_ablation ? "ablation" : "correlation";
  out.config_hash = config_hash(cfg);

  TrainedPipeline tp = train_pipeline(cfg);
  const int m = tp.pipe.Z.size();
  const int n_test = tp.pipe.test.size();
  const int sweep = (cfg.scenario.sweep_count > 0 && cfg.scenario.sweep_count < m)
                        ? cfg.scenario.sweep_count
                        : m;
  const std::vector<long> z_ids = id_range(sweep);
  const std::vector<long> x_ids = id_range(n_test);

  InfluenceEngine engine(*tp.pipe.model, tp.pipe.Z, tp.pipe.X, tp.pretrain, tp.finetune,
                         influence_config_of(cfg));
  auto records = score_all(engine, tp.pipe.test, z_ids, x_ids, tp.mode);
  auto sums = summed_scores(records, sweep, n_test);

  std::vector<double> identity_sums;
  std::vector<InfluenceRecord> identity_records;
  if (with_ablation) {
    InfluenceConfig ic = influence_config_of(cfg);
    ic.identity_hessian = true;
    InfluenceEngine ablated(*tp.pipe.model, tp.pipe.Z, tp.pipe.X, tp.pretrain, tp.finetune, ic);
    identity_records = score_all(ablated, tp.pipe.test, z_ids, x_ids, tp.mode);
    identity_sums = summed_scores(identity_records, sweep, n_test);
  }

  // Ground truth: leave-one-out retraining, warm-started under the
  // configured step budget. Predicted removal effect is -(1/m) * score.
  Validator validator(*tp.pipe.model, tp.pipe.Z, tp.pipe.X, tp.pipe.test, tp.pretrain,
                      tp.finetune, tp.mode, truth_config_of(cfg));
  std::vector<double> base_losses = validator.base_test_losses();

  std::vector<double> predicted(sweep), truth(sweep);
  std::vector<double> predicted_pairs, truth_pairs;
  predicted_pairs.reserve(static_cast<std::size_t>(sweep) * n_test);
  truth_pairs.reserve(static_cast<std::size_t>(sweep) * n_test);
  std::vector<double> weights(m, 1.0);
  for (int zi = 0; zi < sweep; ++zi) {
    weights[zi] = 0.0;
    std::vector<double> new_losses = validator.retrained_test_losses(weights, /*warm=*/true);
    weights[zi] = 1.0;
    double diff_sum = 0.0;
    for (int xi = 0; xi < n_test; ++xi) {
      const double diff = new_losses[xi] - base_losses[xi];
      diff_sum += diff;
      if (cfg.scenario.per_pair) {
        predicted_pairs.push_back(-records[static_cast<std::size_t>(zi) * n_test + xi].score / m);
        truth_pairs.push_back(diff);
      }
    }
    predicted[zi] = -sums[zi] / m;
    truth[zi] = diff_sum;
  }

  out.correlation.scenario = out.name;
  out.correlation.config_hash = out.config_hash;
  for (int zi = 0; zi < sweep; ++zi) out.correlation.pairs.emplace_back(predicted[zi], truth[zi]);
  out.correlation.pearson = pearson_r(predicted, truth);
  out.metrics["pearson"] = out.correlation.pearson;
  if (cfg.scenario.per_pair && sweep * n_test >= 2) {
    out.metrics["pearson_per_pair"] = pearson_r(predicted_pairs, truth_pairs);
  }
  if (with_ablation) {
    std::vector<double> identity_predicted(sweep);
    for (int zi = 0; zi < sweep; ++zi) identity_predicted[zi] = -identity_sums[zi] / m;
    out.metrics["pearson_identity"] = pearson_r(identity_predicted, truth);
  }
  out.metrics["m"] = m;
  out.metrics["test_size"] = n_test;

  out.csv_header = {"z_id", "predicted_loss_change", "true_loss_change"};
  if (with_ablation) out.csv_header.push_back("predicted_identity_hessian");
  for (int zi = 0; zi < sweep; ++zi) {
    std::vector<std::string> row = {std::to_string(zi), fmt(predicted[zi]), fmt(truth[zi])};
    if (with_ablation) row.push_back(fmt(-identity_sums[zi] / m));
    out.csv_rows.push_back(std::move(row));
  }
  return out;
}

ScenarioOutcome cleansing_study(const RunConfig& cfg) {
  ScenarioOutcome out;
  out.name = "cleansing";
  out.config_hash = config_hash(cfg);
  out.csv_header = {"seed", "variant", "removed", "test_loss", "test_accuracy"};

  double sum_base_loss = 0, sum_top_loss = 0, sum_rand_loss = 0;
  double sum_base_acc = 0, sum_top_acc = 0, sum_rand_acc = 0;
  for (std::uint64_t seed : cfg.scenario.seeds) {
    RunConfig c = with_seed_offset(cfg, seed);
    TrainedPipeline tp = train_pipeline(c);
    const int m = tp.pipe.Z.size();

    InfluenceEngine engine(*tp.pipe.model, tp.pipe.Z, tp.pipe.X, tp.pretrain, tp.finetune,
                           influence_config_of(c));
    const std::vector<long> z_ids = id_range(m);
    const std::vector<long> x_ids = id_range(tp.pipe.test.size());
    auto records = score_all(engine, tp.pipe.test, z_ids, x_ids, tp.mode);
    auto sums = summed_scores(records, m, tp.pipe.test.size());

    const int k = static_cast<int>(std::floor(cfg.scenario.top_fraction * m + 1e-9));
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (sums[a] != sums[b]) return sums[a] > sums[b];
      return a < b;
    });

    // Cleansing retrains from scratch under the full training budget.
    TruthConfig full;
    full.pretrain = train_config_of(c.pretrain);
    full.finetune = train_config_of(c.finetune);
    Validator validator(*tp.pipe.model, tp.pipe.Z, tp.pipe.X, tp.pipe.test, tp.pretrain,
                        tp.finetune, tp.mode, full);

    const double base_loss = tp.pipe.model->finetune_loss_sum(tp.finetune.params, tp.pipe.test);
    const double base_acc = tp.pipe.model->finetune_accuracy(tp.finetune.params, tp.pipe.test);

    std::vector<double> weights(m, 1.0);
    for (int i = 0; i < k; ++i) weights[order[i]] = 0.0;
    auto [top_loss, top_acc] = validator.retrained_loss_and_accuracy(weights, /*warm=*/false);

    std::fill(weights.begin(), weights.end(), 1.0);
    std::vector<int> ids(m);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(c.dataset.seed ^ 0x5eedc1eau);
    rng.shuffle(ids);
    for (int i = 0; i < k; ++i) weights[ids[i]] = 0.0;
    auto [rand_loss, rand_acc] = validator.retrained_loss_and_accuracy(weights, /*warm=*/false);

    sum_base_loss += base_loss;
    sum_top_loss += top_loss;
    sum_rand_loss += rand_loss;
    sum_base_acc += base_acc;
    sum_top_acc += top_acc;
    sum_rand_acc += rand_acc;

    out.csv_rows.push_back({std::to_string(seed), "baseline", "0", fmt(base_loss), fmt(base_acc)});
    out.csv_rows.push_back(
        {std::to_string(seed), "top_influence", std::to_string(k), fmt(top_loss), fmt(top_acc)});
    out.csv_rows.push_back(
        {std::to_string(seed), "random", std::to_string(k), fmt(rand_loss), fmt(rand_acc)});
  }
  const double count = static_cast<double>(cfg.scenario.seeds.size());
  out.metrics["mean_loss_baseline"] = sum_base_loss / count;
  out.metrics["mean_loss_top"] = sum_top_loss / count;
  out.metrics["mean_loss_random"] = sum_rand_loss / count;
  out.metrics["mean_acc_baseline"] = sum_base_acc / count;
  out.metrics["mean_acc_top"] = sum_top_acc / count;
  out.metrics["mean_acc_random"] = sum_rand_acc / count;
  return out;
}

ScenarioOutcome similarity_study(const RunConfig& cfg) {
  ScenarioOutcome out;
  out.name = "similarity";
  out.config_hash = config_hash(cfg);
  out.csv_header = {"seed", "mean_abs_same_task", "mean_abs_different_task", "ratio"};

  double sum_same = 0, sum_diff = 0;
  for (std::uint64_t seed : cfg.scenario.seeds) {
    RunConfig c_diff = with_seed_offset(cfg, seed);
    RunConfig c_same = c_diff;
    // Task A is the pretraining task itself: same classes, fresh examples.
    c_same.dataset.finetune_classes = c_same.dataset.pretrain_classes;

    TrainedPipeline tp_same = train_pipeline(c_same);
    TrainedPipeline tp_diff = train_pipeline(c_diff);
    const double mean_same = mean_abs_summed_score(c_same, tp_same);
    const double mean_diff = mean_abs_summed_score(c_diff, tp_diff);
    sum_same += mean_same;
    sum_diff += mean_diff;
    out.csv_rows.push_back({std::to_string(seed), fmt(mean_same), fmt(mean_diff),
                            fmt(mean_diff != 0.0 ? mean_same / mean_diff : 0.0)});
  }
  const double count = static_cast<double>(cfg.scenario.seeds.size());
  out.metrics["mean_abs_same"] = sum_same / count;
  out.metrics["mean_abs_different"] = sum_diff / count;
  return out;
}

ScenarioOutcome datasize_study(const RunConfig& cfg) {
  ScenarioOutcome out;
  out.name = "datasize";
  out.config_hash = config_hash(cfg);
  out.csv_header = {"seed", "finetune_examples_small", "mean_abs_small", "finetune_examples_large",
                    "mean_abs_large"};

  RunConfig small = cfg;
  RunConfig large = cfg;
  large.dataset.finetune_train_per_class *= cfg.scenario.datasize_factor;
  large.finetune.max_steps *= cfg.scenario.datasize_factor;
  // Pin both variants to one pool so they share Z and the test set.
  const int pool = large.dataset.pretrain_per_class + large.dataset.finetune_train_per_class +
                   large.dataset.finetune_test_per_class;
  small.dataset.pool_per_class = pool;
  large.dataset.pool_per_class = pool;

  double sum_small = 0, sum_large = 0;
  int n_small = 0, n_large = 0;
  for (std::uint64_t seed : cfg.scenario.seeds) {
    TrainedPipeline tp_small = train_pipeline(with_seed_offset(small, seed));
    TrainedPipeline tp_large = train_pipeline(with_seed_offset(large, seed));
    n_small = tp_small.pipe.X.size();
    n_large = tp_large.pipe.X.size();
    const double mean_small = mean_abs_summed_score(small, tp_small);
    const double mean_large = mean_abs_summed_score(large, tp_large);
    sum_small += mean_small;
    sum_large += mean_large;
    out.csv_rows.push_back({std::to_string(seed), std::to_string(n_small), fmt(mean_small),
                            std::to_string(n_large), fmt(mean_large)});
  }
  const double count = static_cast<double>(cfg.scenario.seeds.size());
  out.metrics["mean_abs_small"] = sum_small / count;
  out.metrics["mean_abs_large"] = sum_large / count;
  out.metrics["n_small"] = n_small;
  out.metrics["n_large"] = n_large;
  return out;
}

}  // namespace

ScenarioOutcome run_scenario(const RunConfig& cfg) {
  const std::string& name = cfg.scenario.name;
  if (name == "correlation") return correlation_like(cfg, false);
  if (name == "ablation") return correlation_like(cfg, true);
  if (name == "cleansing") return cleansing_study(cfg);
  if (name == "similarity") return similarity_study(cfg);
  if (name == "datasize") return datasize_study(cfg);
  throw ScenarioError("run_scenario: unknown scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// Presets.
// ---------------------------------------------------------------------------

RunConfig preset_convex_correlation(int pretrain_per_class) {
  RunConfig cfg;
  cfg.dataset.num_classes = 6;
  cfg.dataset.dim = 8;
  cfg.dataset.seed = 42;
  cfg.dataset.noise_sigma = 1.3;
  cfg.dataset.pretrain_classes = {0, 1, 2, 3};
  cfg.dataset.finetune_classes = {4, 5};
  cfg.dataset.pretrain_per_class = pretrain_per_class;
  cfg.dataset.finetune_train_per_class = 20;
  cfg.dataset.finetune_test_per_class = 15;

  cfg.model.embed_dims = {4};  // multinomial logistic embedding, identity pretrain head
  cfg.model.embed_output_activation = false;
  cfg.model.identity_pretrain_head = true;
  cfg.model.l2_pretrain = 5e-3;
  cfg.model.l2_finetune = 1e-3;
  cfg.model.init_seed = 7;

  cfg.pretrain.optimizer = "newton";
  cfg.pretrain.grad_tol = 1e-11;
  cfg.pretrain.max_steps = 200;
  cfg.finetune = cfg.pretrain;
  cfg.finetune.mode = "fixed_W";

  cfg.solver.pretrain_damping = 0.0;  // the ridge already makes H positive definite
  cfg.solver.finetune_damping = 0.0;
  cfg.solver.cg_tol = 1e-10;
  cfg.solver.cg_max_iters = 500;
  cfg.solver.hessian_subsample = 0;

  cfg.scenario.name = "correlation";
  cfg.scenario.eps = 1e-3;
  cfg.scenario.loo_max_steps = 100;
  cfg.scenario.loo_grad_tol = 1e-11;
  return cfg;
}

RunConfig preset_mlp_correlation() {
  RunConfig cfg;
  cfg.dataset.num_classes = 8;
  cfg.dataset.dim = 10;
  cfg.dataset.seed = 42;
  cfg.dataset.noise_sigma = 1.25;
  cfg.dataset.label_noise = 0.08;
  cfg.dataset.pretrain_classes = {0, 1, 2, 3};
  cfg.dataset.finetune_classes = {4, 5, 6, 7};
  cfg.dataset.pretrain_per_class = 40;
  cfg.dataset.finetune_train_per_class = 15;
  cfg.dataset.finetune_test_per_class = 10;

  cfg.model.embed_dims = {8};
  cfg.model.embed_output_activation = true;
  cfg.model.identity_pretrain_head = false;
  cfg.model.l2_pretrain = 1e-2;
  cfg.model.l2_finetune = 1e-3;
  cfg.model.init_seed = 7;

  cfg.pretrain.optimizer = "adam";
  cfg.pretrain.lr = 0.02;
  cfg.pretrain.batch_size = 0;
  cfg.pretrain.max_steps = 30000;
  cfg.pretrain.grad_tol = 1e-7;
  cfg.pretrain.check_every = 50;
  cfg.finetune = cfg.pretrain;
  cfg.finetune.mode = "fixed_W";

  cfg.solver.pretrain_damping = 1e-2;
  cfg.solver.finetune_damping = 1e-8;
  cfg.solver.cg_tol = 1e-8;
  cfg.solver.cg_max_iters = 400;
  cfg.solver.hessian_subsample = 0;

  cfg.scenario.name = "correlation";
  cfg.scenario.loo_max_steps = 50;
  cfg.scenario.loo_optimizer = "newton";
  cfg.scenario.loo_grad_tol = 1e-9;
  cfg.scenario.per_pair = false;
  return cfg;
}

RunConfig preset_case2_convex() {
  RunConfig cfg = preset_convex_correlation(25);
  cfg.dataset.finetune_train_per_class = 10;
  cfg.finetune.mode = "update_W";
  cfg.finetune.proximal_alpha = 0.01;
  cfg.influence.alpha = 0.01;
  return cfg;
}

RunConfig preset_cleansing() {
  RunConfig cfg = preset_mlp_correlation();
  cfg.scenario.name = "cleansing";
  cfg.dataset.label_noise = 0.15;
  cfg.dataset.pretrain_per_class = 20;  // m = 80 per seed, retrained three times
  cfg.scenario.top_fraction = 0.10;
  cfg.scenario.seeds = {1, 2, 3, 4, 5};
  return cfg;
}

RunConfig preset_similarity() {
  RunConfig cfg;
  cfg.dataset.num_classes = 4;
  cfg.dataset.dim = 8;
  cfg.dataset.seed = 42;
  cfg.dataset.noise_sigma = 1.3;
  cfg.dataset.pretrain_classes = {0, 1};
  cfg.dataset.finetune_classes = {2, 3};
  cfg.dataset.pretrain_per_class = 30;
  cfg.dataset.finetune_train_per_class = 15;
  cfg.dataset.finetune_test_per_class = 10;

  cfg.model.embed_dims = {2};
  cfg.model.embed_output_activation = false;
  cfg.model.identity_pretrain_head = true;
  cfg.model.l2_pretrain = 5e-3;
  cfg.model.l2_finetune = 1e-3;

  cfg.pretrain.optimizer = "newton";
  cfg.pretrain.grad_tol = 1e-11;
  cfg.pretrain.max_steps = 200;
  cfg.finetune = cfg.pretrain;
  cfg.finetune.mode = "fixed_W";

  cfg.solver.pretrain_damping = 0.0;
  cfg.solver.finetune_damping = 0.0;
  cfg.solver.cg_tol = 1e-10;
  cfg.solver.cg_max_iters = 500;
  cfg.solver.hessian_subsample = 0;

  cfg.scenario.name = "similarity";
  cfg.scenario.seeds = {1, 2, 3, 4, 5};
  return cfg;
}

RunConfig preset_datasize() {
  RunConfig cfg = preset_similarity();
  cfg.scenario.name = "datasize";
  cfg.dataset.finetune_train_per_class = 4;
  cfg.finetune.mode = "update_W";
  cfg.finetune.proximal_alpha = 0.01;
  cfg.influence.alpha = 0.01;
  cfg.scenario.datasize_factor = 3;
  return cfg;
}

}  // namespace msi
