#include "msinfluence/trainer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "msinfluence/common.hpp"
#include "msinfluence/linalg.hpp"
#include "msinfluence/solver.hpp"

namespace msi {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_objective_finite(double value, long step) {
  if (!std::isfinite(value)) {
    throw NumericError("trainer: objective diverged (non-finite) at step " +
                       std::to_string(step));
  }
}

Checkpoint finish(const Objective& objective, ParamVector params, Stage stage, FinetuneMode mode,
                  bool converged, long steps) {
  Checkpoint ckpt;
  std::vector<double> g;
  ckpt.objective_value = objective.value_and_grad(params, g);
  ckpt.grad_norm = norm2(g);
  ckpt.params = std::move(params);
  ckpt.stage = stage;
  ckpt.mode = mode;
  ckpt.converged = converged || ckpt.grad_norm <= 0.0;
  ckpt.steps = steps;
  return ckpt;
}

Checkpoint minimize_first_order(const Objective& objective, const ParamVector& init,
                                const TrainConfig& cfg, Stage stage, FinetuneMode mode) {
  ParamVector params = init;
  const auto& wrt = objective.wrt();
  const std::size_t p = objective.dim(params);
  const int n = objective.data().size();

  std::vector<double> full_grad;
  double value = objective.value_and_grad(params, full_grad);
  check_objective_finite(value, 0);
  if (norm2(full_grad) <= cfg.grad_tol) {
    Checkpoint ckpt = finish(objective, std::move(params), stage, mode, true, 0);
    ckpt.converged = true;
    return ckpt;
  }

  std::vector<double> theta = params.gather(wrt);
  std::vector<double> m1(p, 0.0), m2(p, 0.0);  // Adam moments
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Rng rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const bool full_batch = cfg.batch_size <= 0 || cfg.batch_size >= n || n == 0;
  std::size_t cursor = 0;

  std::vector<double> g;
  bool converged = false;
  long step = 0;
  for (step = 1; step <= cfg.max_steps; ++step) {
    double batch_value;
    if (full_batch) {
      batch_value = objective.value_and_grad(params, g);
    } else {
      if (cursor + cfg.batch_size > static_cast<std::size_t>(n)) cursor = 0;
      if (cursor == 0) rng.shuffle(order);
      std::span<const int> rows(order.data() + cursor, static_cast<std::size_t>(cfg.batch_size));
      cursor += cfg.batch_size;
      batch_value = objective.minibatch_value_and_grad(params, rows, g);
    }
    check_objective_finite(batch_value, step);

    if (cfg.optimizer == OptimizerKind::Adam) {
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < p; ++i) {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
        theta[i] -= cfg.lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + eps);
      }
    } else {
      for (std::size_t i = 0; i < p; ++i) theta[i] -= cfg.lr * g[i];
    }
    params.scatter(wrt, theta);

    if (step % cfg.check_every == 0 || step == cfg.max_steps) {
      value = objective.value_and_grad(params, full_grad);
      check_objective_finite(value, step);
      if (norm2(full_grad) <= cfg.grad_tol) {
        converged = true;
        break;
      }
    }
  }
  return finish(objective, std::move(params), stage, mode, converged, std::min(step, cfg.max_steps));
}

// Damped Newton with backtracking; only for desk-scale parameter counts.
// Used where the validation oracles need optima at gradient norms that
// first-order methods cannot reach in reasonable step budgets.
Checkpoint minimize_newton(const Objective& objective, const ParamVector& init,
                           const TrainConfig& cfg, Stage stage, FinetuneMode mode) {
  ParamVector params = init;
  const auto& wrt = objective.wrt();
  const std::size_t p = objective.dim(params);

  bool converged = false;
  long step = 0;
  std::vector<double> g;
  for (step = 0; step < cfg.max_steps; ++step) {
    double value = objective.value_and_grad(params, g);
    check_objective_finite(value, step);
    if (norm2(g) <= cfg.grad_tol) {
      converged = true;
      break;
    }
    Tensor h = dense_hessian(objective, params);

    std::vector<double> theta = params.gather(wrt);
    std::vector<double> neg_g(p);
    for (std::size_t i = 0; i < p; ++i) neg_g[i] = -g[i];

    // Levenberg-Marquardt: full steps, escalating the diagonal shift until
    // the objective decreases. Step-length backtracking creeps along
    // negative-curvature directions on indefinite Hessians; growing tau
    // turns the step into a descent direction instead.
    double tau = 0.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Tensor hd = h;
      if (tau > 0.0) {
        for (std::size_t i = 0; i < p; ++i) hd.at(i, i) += tau;
      }
      std::vector<double> dir;
      if (lu_solve(hd, neg_g, dir)) {
        std::vector<double> cand = theta;
        for (std::size_t i = 0; i < p; ++i) cand[i] += dir[i];
        params.scatter(wrt, cand);
        const double cand_value = objective.value(params);
        if (std::isfinite(cand_value) &&
            cand_value <= value + 1e-14 * (std::fabs(value) + 1.0)) {
          accepted = true;
        } else {
          params.scatter(wrt, theta);
        }
      }
      if (!accepted) tau = (tau == 0.0) ? 1e-8 : tau * 10.0;
    }
    if (!accepted) break;  // no descent found; report current point honestly
  }
  return finish(objective, std::move(params), stage, mode, converged, step);
}

}  // namespace

Checkpoint minimize(const Objective& objective, const ParamVector& init, const TrainConfig& cfg,
                    Stage stage, FinetuneMode mode) {
  if (cfg.lr <= 0.0) throw ConfigError("trainer: lr must be > 0");
  if (cfg.grad_tol <= 0.0) throw ConfigError("trainer: grad_tol must be > 0");
  Checkpoint ckpt = (cfg.optimizer == OptimizerKind::Newton)
                        ? minimize_newton(objective, init, cfg, stage, mode)
                        : minimize_first_order(objective, init, cfg, stage, mode);
  if (mode == FinetuneMode::UpdateW) ckpt.proximal_alpha = cfg.proximal_alpha;
  return ckpt;
}

Checkpoint train_pretrain(const TwoStageModel& model, const Dataset& Z, const TrainConfig& cfg,
                          std::span<const double> weights, const ParamVector* warm_start) {
  if (Z.size() == 0) throw ConfigError("train_pretrain: empty pretraining set");
  if (!weights.empty() && static_cast<int>(weights.size()) != Z.size()) {
    throw ConfigError("train_pretrain: weight vector length must equal |Z|");
  }
  const auto& loss = model.pretrain_loss();
  Objective objective(loss, Z,
                      std::vector<std::string>(loss.reads().begin(), loss.reads().end()));
  if (!weights.empty()) objective.set_weights(std::vector<double>(weights.begin(), weights.end()));
  const ParamVector init = warm_start ? *warm_start : model.init_params();
  return minimize(objective, init, cfg, Stage::Pretrain, FinetuneMode::None);
}

Checkpoint train_finetune(const TwoStageModel& model, const Dataset& X, const Checkpoint& start,
                          FinetuneMode mode, const TrainConfig& cfg,
                          const ParamVector* warm_init) {
  if (mode == FinetuneMode::None) throw ConfigError("train_finetune: a mode is required");
  std::vector<std::string> wrt;
  if (mode == FinetuneMode::FixedW) {
    wrt = {kSegTheta};
  } else {
    wrt = {kSegTheta, kSegW};
  }

  Objective objective(model.finetune_loss(), X, wrt);
  if (mode == FinetuneMode::UpdateW && cfg.proximal_alpha > 0.0) {
    ProximalTether tether;
    tether.segment = kSegW;
    auto wbar = start.params.slice(kSegW);
    tether.reference.assign(wbar.begin(), wbar.end());
    tether.alpha = cfg.proximal_alpha;
    objective.set_proximal(std::move(tether));
  }

  ParamVector init = start.params;
  if (warm_init) {
    for (const std::string& seg : wrt) {
      auto dst = init.slice(seg);
      auto src = warm_init->slice(seg);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
    }
  }
  return minimize(objective, init, cfg, Stage::Finetune, mode);
}

}  // namespace msi
