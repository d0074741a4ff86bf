#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "msinfluence/checkpoint_io.hpp"
#include "msinfluence/trainer.hpp"
#include "support/oracles.hpp"

using namespace msi;

namespace {

struct ConvexFixture {
  TwoStageModel model;
  Dataset Z;

  explicit ConvexFixture(int per_class = 25, std::uint64_t seed = 42)
      : model(make_arch()) {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.dim = 6;
    spec.per_class = per_class;
    spec.class_means_seed = seed;
    spec.noise_sigma = 1.2;
    Z = make_synthetic(spec);
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

TrainConfig newton_cfg(double tol = 1e-11) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Newton;
  cfg.grad_tol = tol;
  cfg.max_steps = 100;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("separable two-point logistic reaches the separator direction") {
  // Single linear logit on two points; the optimum direction is along the
  // difference of the points (ridge keeps it finite).
  ModelArch arch;
  arch.input_dim = 2;
  arch.embed_dims = {2};
  arch.embed_output_activation = false;
  arch.identity_pretrain_head = true;
  arch.num_pretrain_classes = 2;
  arch.num_finetune_classes = 2;
  arch.l2_pretrain = 1e-2;
  arch.init_seed = 5;
  TwoStageModel model(arch);

  Dataset two;
  two.features = Tensor({2, 2}, {1.0, 0.0, -1.0, 0.0});
  two.labels = {0, 1};
  two.targets = {0, 1};
  two.class_set = {0, 1};

  Checkpoint ckpt = train_pretrain(model, two, newton_cfg());
  CHECK(ckpt.converged);
  CHECK(ckpt.grad_norm <= 1e-11);
  // Logit margin of class 0 at x=(1,0) must be positive, and the x-axis
  // weight difference dominates.
  auto w = ckpt.params.slice(kSegW);
  // W is (2x2 weights, 2 bias): rows are class logits.
  const double margin = (w[0] - w[2]);
  CHECK(margin > 0.1);
}

TEST_CASE("all-zero weights keep the parameters at the initialization") {
  ConvexFixture fx(10);
  std::vector<double> weights(fx.Z.size(), 0.0);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.max_steps = 50;
  Checkpoint ckpt = train_pretrain(fx.model, fx.Z, cfg, weights);
  ParamVector init = fx.model.init_params();
  CHECK(std::vector<double>(ckpt.params.data().begin(), ckpt.params.data().end()) ==
        std::vector<double>(init.data().begin(), init.data().end()));
  CHECK(ckpt.objective_value == 0.0);
}

TEST_CASE("adam and the independent dense Newton oracle agree on the convex objective") {
  ConvexFixture fx(25);  // m = 100
  TrainConfig adam;
  adam.optimizer = OptimizerKind::Adam;
  adam.lr = 0.05;
  adam.max_steps = 60000;
  adam.grad_tol = 1e-9;
  adam.check_every = 100;
  Checkpoint via_adam = train_pretrain(fx.model, fx.Z, adam);
  CHECK(via_adam.converged);

  Objective objective(fx.model.pretrain_loss(), fx.Z, {kSegW, kSegU});
  ParamVector p = fx.model.init_params();
  const double newton_value = testing::newton_minimize(objective, p);
  CHECK(std::fabs(via_adam.objective_value - newton_value) <= 1e-8);
}

TEST_CASE("trainer's newton mode matches the oracle too") {
  ConvexFixture fx(25);
  Checkpoint ckpt = train_pretrain(fx.model, fx.Z, newton_cfg());
  CHECK(ckpt.converged);
  Objective objective(fx.model.pretrain_loss(), fx.Z, {kSegW, kSegU});
  ParamVector p = fx.model.init_params();
  const double newton_value = testing::newton_minimize(objective, p);
  CHECK(std::fabs(ckpt.objective_value - newton_value) <= 1e-10);
}

TEST_CASE("training is deterministic") {
  ConvexFixture fx(10);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.lr = 0.05;
  cfg.batch_size = 8;
  cfg.max_steps = 500;
  cfg.seed = 99;
  Checkpoint a = train_pretrain(fx.model, fx.Z, cfg);
  Checkpoint b = train_pretrain(fx.model, fx.Z, cfg);
  CHECK(std::vector<double>(a.params.data().begin(), a.params.data().end()) ==
        std::vector<double>(b.params.data().begin(), b.params.data().end()));
  CHECK(a.objective_value == b.objective_value);
}

TEST_CASE("fixed_W finetuning leaves W bit-identical") {
  ConvexFixture fx(10);
  Checkpoint pre = train_pretrain(fx.model, fx.Z, newton_cfg());

  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 6;
  spec.per_class = 10;
  spec.class_means_seed = 7;
  spec.noise_sigma = 1.0;
  Dataset X = make_synthetic(spec);

  Checkpoint ft = train_finetune(fx.model, X, pre, FinetuneMode::FixedW, newton_cfg());
  auto w_before = pre.params.slice(kSegW);
  auto w_after = ft.params.slice(kSegW);
  for (std::size_t i = 0; i < w_before.size(); ++i) CHECK(w_before[i] == w_after[i]);
  CHECK(ft.mode == FinetuneMode::FixedW);
  CHECK(ft.stage == Stage::Finetune);
}

TEST_CASE("empty finetune set with a proximal term keeps W at Wbar") {
  ConvexFixture fx(10);
  Checkpoint pre = train_pretrain(fx.model, fx.Z, newton_cfg());

  Dataset empty;
  empty.features = Tensor::zeros({0, 6});
  empty.class_set = {0, 1};
  empty.role = Role::FinetuneTrain;

  TrainConfig cfg = newton_cfg();
  cfg.proximal_alpha = 0.01;
  Checkpoint ft = train_finetune(fx.model, empty, pre, FinetuneMode::UpdateW, cfg);
  auto w_before = pre.params.slice(kSegW);
  auto w_after = ft.params.slice(kSegW);
  for (std::size_t i = 0; i < w_before.size(); ++i) CHECK(w_before[i] == w_after[i]);
}

TEST_CASE("update_W proximal finetuning matches the Newton oracle on the augmented objective") {
  ConvexFixture fx(15);
  Checkpoint pre = train_pretrain(fx.model, fx.Z, newton_cfg());

  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 6;
  spec.per_class = 10;
  spec.class_means_seed = 71;
  spec.noise_sigma = 1.0;
  Dataset X = make_synthetic(spec);

  TrainConfig cfg = newton_cfg();
  cfg.proximal_alpha = 0.01;
  Checkpoint ft = train_finetune(fx.model, X, pre, FinetuneMode::UpdateW, cfg);
  CHECK(ft.proximal_alpha == 0.01);

  Objective objective(fx.model.finetune_loss(), X, {kSegTheta, kSegW});
  ProximalTether tether;
  tether.segment = kSegW;
  auto wbar = pre.params.slice(kSegW);
  tether.reference.assign(wbar.begin(), wbar.end());
  tether.alpha = 0.01;
  objective.set_proximal(tether);
  ParamVector p = pre.params;
  const double oracle_value = testing::newton_minimize(objective, p);
  CHECK(std::fabs(ft.objective_value - oracle_value) <= 1e-8);
}

TEST_CASE("removing a zero-gradient example leaves the convex optimum unchanged") {
  ConvexFixture fx(10);
  // Plant a far-away, perfectly classified duplicate of class 0's mean
  // direction; with no ridge its gradient saturates to zero.
  ModelArch arch = ConvexFixture::make_arch();
  arch.l2_pretrain = 0.0;
  TwoStageModel model(arch);

  Dataset Z = fx.Z;
  const int m = Z.size();

  Checkpoint base = train_pretrain(model, Z, newton_cfg(1e-9));
  // Find the example with the smallest gradient norm at the optimum.
  const std::string wrt[] = {kSegW, kSegU};
  int best = -1;
  double best_norm = 1e300;
  for (int i = 0; i < m; ++i) {
    ad::Batch b;
    b.x = Z.features.row_ptr(i);
    b.y = Z.targets.data() + i;
    b.n = 1;
    b.dim = Z.dim();
    b.scale = 1.0;
    auto g = ad::grad(model.pretrain_loss(), base.params, b, wrt);
    const double norm = testing::norm2(g);
    if (norm < best_norm) {
      best_norm = norm;
      best = i;
    }
  }
  // Retrain without it and compare objective optima; the shift is bounded by
  // the example's own gradient contribution.
  std::vector<double> weights(m, 1.0);
  weights[best] = 0.0;
  Checkpoint loo = train_pretrain(model, Z, newton_cfg(1e-9), weights, &base.params);
  const double delta = std::fabs(loo.objective_value -
                                 (base.objective_value));
  CHECK(delta <= best_norm + 1e-6);
}

TEST_CASE("divergence is reported as a numeric error") {
  ConvexFixture fx(5);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.lr = 1e12;  // guaranteed blow-up through tanh-free logits
  cfg.max_steps = 200;
  cfg.check_every = 1;
  CHECK_THROWS_AS(train_pretrain(fx.model, fx.Z, cfg), NumericError);
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
  ConvexFixture fx(6);
  Checkpoint ckpt = train_pretrain(fx.model, fx.Z, newton_cfg());
  ckpt.config_hash = "deadbeefdeadbeef";
  save_checkpoint(ckpt, "build_test_ckpt.msif");
  Checkpoint loaded = load_checkpoint("build_test_ckpt.msif");
  CHECK(std::vector<double>(ckpt.params.data().begin(), ckpt.params.data().end()) ==
        std::vector<double>(loaded.params.data().begin(), loaded.params.data().end()));
  CHECK(loaded.config_hash == "deadbeefdeadbeef");
  CHECK(loaded.stage == Stage::Pretrain);
  CHECK(loaded.objective_value == ckpt.objective_value);
  CHECK(loaded.grad_norm == ckpt.grad_norm);
  CHECK(loaded.converged == ckpt.converged);

  SUBCASE("wrong magic is a version error") {
    std::ofstream f("build_test_bad.msif", std::ios::binary);
    f << "NOPE" << std::string(64, 'x');
    f.close();
    CHECK_THROWS_AS(load_checkpoint("build_test_bad.msif"), CheckpointError);
  }

  SUBCASE("corrupting one payload byte trips the CRC") {
    std::ifstream in("build_test_ckpt.msif", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream out("build_test_corrupt.msif", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint("build_test_corrupt.msif"), CheckpointError);
  }
}

TEST_SUITE_END();
