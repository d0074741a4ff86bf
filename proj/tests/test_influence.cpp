#include <doctest.h>

#include <cmath>

#include "msinfluence/influence.hpp"
#include "msinfluence/linalg.hpp"
#include "msinfluence/validation.hpp"
#include "support/oracles.hpp"

using namespace msi;

namespace {

// Desk-scale convex pipeline: multinomial-logistic pretraining on four
// classes, logistic finetune head on two held-out classes, trained to
// Newton-grade optima.
struct ConvexPipeline {
  TwoStageModel model;
  Dataset Z, X, test;
  Checkpoint pre, ft_fixed, ft_updated;
  InfluenceConfig icfg;

  explicit ConvexPipeline(int m_per_class = 10, double alpha = 0.01)
      : model(make_arch()) {
    SyntheticSpec pool_spec;
    pool_spec.num_classes = 6;
    pool_spec.dim = 6;
    pool_spec.per_class = m_per_class + 16;
    pool_spec.class_means_seed = 42;
    pool_spec.noise_sigma = 1.3;
    Dataset pool = make_synthetic(pool_spec);

    Dataset pre_pool = filter_classes(pool, {0, 1, 2, 3}, Role::Pretrain);
    Z = split_per_class(pre_pool, m_per_class, Role::Pretrain, Role::Pretrain).first;
    Dataset ft_pool = filter_classes(pool, {4, 5}, Role::FinetuneTrain);
    auto split = split_per_class(ft_pool, 8, Role::FinetuneTrain, Role::FinetuneTest);
    X = split.first;
    test = split.second;

    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Newton;
    cfg.grad_tol = 1e-12;
    cfg.max_steps = 100;
    pre = train_pretrain(model, Z, cfg);
    ft_fixed = train_finetune(model, X, pre, FinetuneMode::FixedW, cfg);
    TrainConfig prox_cfg = cfg;
    prox_cfg.proximal_alpha = alpha;
    ft_updated = train_finetune(model, X, pre, FinetuneMode::UpdateW, prox_cfg);

    icfg.pretrain_solver = SolverConfig{0.0, 1e-9, 800, 0, 17};
    icfg.finetune_solver = SolverConfig{0.0, 1e-9, 800, 0, 17};
    icfg.alpha = alpha;
  }

  static ModelArch make_arch() {
    ModelArch arch;
    arch.input_dim = 6;
    arch.embed_dims = {4};
    arch.embed_output_activation = false;
    arch.identity_pretrain_head = true;
    arch.num_pretrain_classes = 4;
    arch.num_finetune_classes = 2;
    arch.l2_pretrain = 1e-2;
    arch.l2_finetune = 1e-3;
    arch.init_seed = 17;
    return arch;
  }
};

std::vector<long> ids_upto(int n) {
  std::vector<long> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace

TEST_SUITE_BEGIN("influence");

TEST_CASE("influence_z_w matches the dense -H^-1 g solve on the convex config") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);

  Objective pretrain_obj(cp.model.pretrain_loss(), cp.Z, {kSegW, kSegU});
  Tensor h = dense_hessian(pretrain_obj, cp.pre.params);

  for (long z : {0L, 7L, 23L}) {
    auto [izw, report] = engine.influence_z_w(z);
    CHECK(report.converged);
    auto gz = engine.pretrain_example_grad(z);
    std::vector<double> dense;
    REQUIRE(lu_solve(h, gz, dense));
    for (double& v : dense) v = -v;
    CHECK(testing::rel_err(izw, dense) <= 1e-5);
  }
}

TEST_CASE("duplicated pretraining examples get identical responses") {
  ConvexPipeline cp;
  Dataset dup = cp.Z;
  const int last = dup.size() - 1;
  for (int j = 0; j < dup.dim(); ++j) dup.features.at(last, j) = dup.features.at(0, j);
  dup.labels[last] = dup.labels[0];
  dup.targets[last] = dup.targets[0];

  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Newton;
  cfg.grad_tol = 1e-12;
  Checkpoint pre = train_pretrain(cp.model, dup, cfg);
  Checkpoint ft = train_finetune(cp.model, cp.X, pre, FinetuneMode::FixedW, cfg);

  InfluenceEngine engine(cp.model, dup, cp.X, pre, ft, cp.icfg);
  auto [a, ra] = engine.influence_z_w(0);
  auto [b, rb] = engine.influence_z_w(last);
  CHECK(testing::rel_err(a, b) <= 1e-12);

  const long zs[] = {0, last};
  const long xs[] = {0, 1};
  auto records = engine.influence_fixed(zs, cp.test, xs);
  CHECK(records[0].score == doctest::Approx(records[2].score).epsilon(1e-12));
  CHECK(records[1].score == doctest::Approx(records[3].score).epsilon(1e-12));
}

TEST_CASE("fixed-embedding scores require a fixed_W checkpoint") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_updated, cp.icfg);
  const long zs[] = {0};
  const long xs[] = {0};
  CHECK_THROWS_AS(engine.influence_fixed(zs, cp.test, xs), ConfigError);
}

TEST_CASE("case-1 score matches the epsilon-retraining oracle per pair") {
  // This pins the sign convention: the score is d f(x_t) / d eps for the
  // objective G + eps*g(z).
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);

  TruthConfig tcfg;
  tcfg.pretrain.optimizer = OptimizerKind::Newton;
  tcfg.pretrain.grad_tol = 1e-12;
  tcfg.pretrain.max_steps = 100;
  tcfg.finetune = tcfg.pretrain;
  tcfg.eps = 1e-3;

  // Single-test-point validator: restrict the test set to one example.
  Dataset single = split_per_class(cp.test, 1, Role::FinetuneTest, Role::FinetuneTest).first;
  single.labels.resize(1);
  single.targets.resize(1);
  single.features = Tensor({1, 6}, std::vector<double>(cp.test.features.row_ptr(0),
                                                       cp.test.features.row_ptr(0) + 6));
  Validator validator(cp.model, cp.Z, cp.X, single, cp.pre, cp.ft_fixed, FinetuneMode::FixedW,
                      tcfg);

  const long xs[] = {0};
  for (long z : {1L, 11L, 29L}) {
    const long zs[] = {z};
    auto records = engine.influence_fixed(zs, single, xs);
    const double predicted = records[0].score;
    const double measured = validator.epsilon_truth(z);
    CHECK(std::fabs(predicted - measured) <= 0.05 * std::fabs(measured));
  }
}

TEST_CASE("a saturated zero-gradient example scores exactly zero in both cases") {
  // Without ridge, a far-away perfectly-classified example saturates the
  // softmax: its cross-entropy gradient underflows to exactly zero, so
  // I_{z,W} and every pairwise score must be exactly zero.
  ModelArch arch = ConvexPipeline::make_arch();
  arch.l2_pretrain = 0.0;
  TwoStageModel model(arch);

  ConvexPipeline cp;
  Dataset Z = cp.Z;
  const int z_sat = 0;
  for (int j = 0; j < Z.dim(); ++j) Z.features.at(z_sat, j) = 0.0;
  Z.features.at(z_sat, 0) = 1e4;  // far along one axis
  Z.labels[z_sat] = 0;
  Z.targets[z_sat] = 0;

  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Newton;
  cfg.grad_tol = 1e-10;
  cfg.max_steps = 100;
  Checkpoint pre = train_pretrain(model, Z, cfg);
  // Nudge class 0's weight along the saturated axis so the example is
  // confidently right regardless of where training ended.
  pre.params.slice(kSegW)[0] += 1.0;
  Checkpoint ft = train_finetune(model, cp.X, pre, FinetuneMode::FixedW, cfg);
  TrainConfig prox = cfg;
  prox.proximal_alpha = 0.01;
  Checkpoint ft_up = train_finetune(model, cp.X, pre, FinetuneMode::UpdateW, prox);

  InfluenceEngine engine(model, Z, cp.X, pre, ft, cp.icfg);
  auto gz = engine.pretrain_example_grad(z_sat);
  REQUIRE(testing::norm2(gz) == 0.0);

  auto [izw, report] = engine.influence_z_w(z_sat);
  CHECK(testing::norm2(izw) == 0.0);
  CHECK(report.converged);

  const long zs[] = {z_sat};
  const long xs[] = {0, 1, 2};
  for (const auto& rec : engine.influence_fixed(zs, cp.test, xs)) CHECK(rec.score == 0.0);

  InfluenceEngine engine_up(model, Z, cp.X, pre, ft_up, cp.icfg);
  for (const auto& rec : engine_up.influence_updated(zs, cp.test, xs)) CHECK(rec.score == 0.0);
}

TEST_CASE("test points with opposite f-gradients get exactly negated scores") {
  // With the finetune head zeroed, the softmax is uniform for every input,
  // so two identical feature rows with the two opposite binary labels have
  // exactly opposite test-loss gradients.
  ConvexPipeline cp;
  Checkpoint flat = cp.ft_fixed;
  auto theta = flat.params.slice(kSegTheta);
  for (double& v : theta) v = 0.0;

  Dataset pair;
  pair.role = Role::FinetuneTest;
  pair.class_set = cp.test.class_set;
  pair.features = Tensor::zeros({2, static_cast<std::size_t>(cp.test.dim())});
  for (int j = 0; j < cp.test.dim(); ++j) {
    pair.features.at(0, j) = cp.test.features.at(0, j);
    pair.features.at(1, j) = cp.test.features.at(0, j);
  }
  pair.labels = {cp.test.class_set[0], cp.test.class_set[1]};
  pair.targets = {0, 1};

  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, flat, cp.icfg);
  const long zs[] = {2, 9};
  const long xs[] = {0, 1};
  auto records = engine.influence_fixed(zs, pair, xs);
  CHECK(records[0].score == -records[1].score);
  CHECK(records[2].score == -records[3].score);
  CHECK(records[0].score != 0.0);
}

TEST_CASE("case-1 group influence equals the brute-force double loop") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  auto z_ids = ids_upto(5);
  auto x_ids = ids_upto(5);

  const double group = engine.group_influence(z_ids, cp.test, x_ids, FinetuneMode::FixedW);
  double brute = 0.0;
  for (long z : z_ids) {
    for (long x : x_ids) {
      const long zs[] = {z};
      const long xs[] = {x};
      brute += engine.influence_fixed(zs, cp.test, xs)[0].score;
    }
  }
  CHECK(std::fabs(group - brute) <= 1e-12 * std::max(1.0, std::fabs(brute)));

  SUBCASE("singleton group equals the pairwise score") {
    const long zs[] = {2};
    const long xs[] = {3};
    const double single = engine.group_influence(zs, cp.test, xs, FinetuneMode::FixedW);
    CHECK(single == engine.influence_fixed(zs, cp.test, xs)[0].score);
  }

  SUBCASE("disjoint-union additivity") {
    std::vector<long> z1 = {0, 1}, z2 = {2, 3, 4};
    const double a = engine.group_influence(z1, cp.test, x_ids, FinetuneMode::FixedW);
    const double b = engine.group_influence(z2, cp.test, x_ids, FinetuneMode::FixedW);
    const double whole = engine.group_influence(z_ids, cp.test, x_ids, FinetuneMode::FixedW);
    CHECK(whole == doctest::Approx(a + b).epsilon(1e-12));
  }
}

TEST_CASE("amortized equals per-z recomputation exactly") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  auto z_ids = ids_upto(8);
  auto x_ids = ids_upto(3);
  auto batch = engine.influence_fixed(z_ids, cp.test, x_ids);
  for (long z : z_ids) {
    InfluenceEngine fresh(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
    const long zs[] = {z};
    auto solo = fresh.influence_fixed(zs, cp.test, x_ids);
    for (std::size_t xi = 0; xi < x_ids.size(); ++xi) {
      CHECK(batch[z * 3 + xi].score == solo[xi].score);
    }
  }
}

TEST_CASE("jobs > 1 reproduces the sequential scores bit-for-bit") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  auto z_ids = ids_upto(10);
  auto x_ids = ids_upto(4);
  auto seq = engine.influence_fixed(z_ids, cp.test, x_ids, 1);
  auto par = engine.influence_fixed(z_ids, cp.test, x_ids, 4);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(seq[i].score == par[i].score);
}

TEST_CASE("case-2 requires update_W checkpoints and a positive alpha") {
  ConvexPipeline cp;
  const long zs[] = {0};
  const long xs[] = {0};
  InfluenceEngine wrong(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  CHECK_THROWS_AS(wrong.influence_updated(zs, cp.test, xs), ConfigError);

  InfluenceConfig zero_alpha = cp.icfg;
  zero_alpha.alpha = 0.0;
  InfluenceEngine degenerate(cp.model, cp.Z, cp.X, cp.pre, cp.ft_updated, zero_alpha);
  CHECK_THROWS_AS(degenerate.influence_updated(zs, cp.test, xs), ConfigError);
}

TEST_CASE("case-2 amortized equals the direct block-system route") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_updated, cp.icfg);
  auto x_ids = ids_upto(3);
  auto z_ids = ids_upto(4);
  auto records = engine.influence_updated(z_ids, cp.test, x_ids);
  for (long z : z_ids) {
    for (long x : x_ids) {
      auto direct = engine.influence_updated_direct(z, cp.test, x);
      const double amortized = records[z * 3 + x].score;
      CHECK(std::fabs(direct.score - amortized) <=
            1e-7 * std::max(1e-12, std::fabs(amortized)));
    }
  }
}

TEST_CASE("case-2 score matches the epsilon-retraining oracle") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_updated, cp.icfg);

  TruthConfig tcfg;
  tcfg.pretrain.optimizer = OptimizerKind::Newton;
  tcfg.pretrain.grad_tol = 1e-12;
  tcfg.pretrain.max_steps = 100;
  tcfg.finetune = tcfg.pretrain;
  tcfg.finetune.proximal_alpha = 0.01;
  tcfg.eps = 1e-3;
  Validator validator(cp.model, cp.Z, cp.X, cp.test, cp.pre, cp.ft_updated,
                      FinetuneMode::UpdateW, tcfg);

  auto x_ids = ids_upto(cp.test.size());
  for (long z : {3L, 17L}) {
    const long zs[] = {z};
    auto records = engine.influence_updated(zs, cp.test, x_ids);
    double predicted = 0.0;
    for (const auto& r : records) predicted += r.score;
    const double measured = validator.epsilon_truth(z);
    CHECK(std::fabs(predicted - measured) <= 0.10 * std::fabs(measured));
  }
}

TEST_CASE("case-2 magnitudes shrink monotonically as alpha drops") {
  ConvexPipeline cp;
  auto x_ids = ids_upto(cp.test.size());
  auto z_ids = ids_upto(cp.Z.size());
  double prev = 1e300;
  for (double alpha : {1e-2, 1e-3, 1e-4}) {
    InfluenceConfig icfg = cp.icfg;
    icfg.alpha = alpha;
    InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_updated, icfg);
    auto records = engine.influence_updated(z_ids, cp.test, x_ids);
    double mean_abs = 0.0;
    for (long z = 0; z < cp.Z.size(); ++z) {
      double sum = 0.0;
      for (std::size_t xi = 0; xi < x_ids.size(); ++xi) sum += records[z * x_ids.size() + xi].score;
      mean_abs += std::fabs(sum);
    }
    mean_abs /= cp.Z.size();
    CHECK(mean_abs < prev);
    prev = mean_abs;
    if (alpha != 0.01) {
      CHECK_FALSE(engine.warnings().empty());  // mismatched-alpha warning recorded
    }
  }
}

TEST_CASE("switching test datasets refreshes the per-test-point cache") {
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  const long zs[] = {0};
  const long xs[] = {0};
  const double against_test = engine.influence_fixed(zs, cp.test, xs)[0].score;

  // Same engine, different dataset under the same x_id: must not reuse the
  // cached vectors.
  const double against_train = engine.influence_fixed(zs, cp.X, xs)[0].score;
  InfluenceEngine fresh(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  CHECK(against_train == fresh.influence_fixed(zs, cp.X, xs)[0].score);
  CHECK(against_train != against_test);

  SUBCASE("oversized subsample requests fall back to the full dataset") {
    InfluenceConfig icfg = cp.icfg;
    icfg.pretrain_solver.hessian_subsample = 100000;
    icfg.finetune_solver.hessian_subsample = 100000;
    InfluenceEngine clamped(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, icfg);
    CHECK(clamped.influence_fixed(zs, cp.test, xs)[0].score == against_test);
  }
}

TEST_CASE("linearity in the z-gradient via example weights") {
  // Scaling z's weight in the perturbed objective scales dg(z) linearly;
  // the case-1 score is a dot product against dg(z), so doubling the
  // gradient doubles the score. Verify through duplicated examples: two
  // copies of z at weight 1 behave like one copy at weight 2.
  ConvexPipeline cp;
  InfluenceEngine engine(cp.model, cp.Z, cp.X, cp.pre, cp.ft_fixed, cp.icfg);
  const long zs[] = {5};
  auto x_ids = ids_upto(cp.test.size());
  auto records = engine.influence_fixed(zs, cp.test, x_ids);

  // group over {z, z} = 2x the singleton score
  std::vector<long> twice = {5, 5};
  const double doubled = engine.group_influence(twice, cp.test, x_ids, FinetuneMode::FixedW);
  double single = 0.0;
  for (const auto& r : records) single += r.score;
  CHECK(doubled == doctest::Approx(2.0 * single).epsilon(1e-12));
}

TEST_SUITE_END();
