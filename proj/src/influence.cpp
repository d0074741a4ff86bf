#include "msinfluence/influence.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "msinfluence/common.hpp"

namespace msi {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Index-stable work distribution: fn(i) writes only slot i, so results are
// identical for any job count.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::size_t>(jobs, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    threads.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

SolveReport identity_report() {
  SolveReport r;
  r.iterations = 0;
  r.residual = 0.0;
  r.converged = true;
  return r;
}

void check_score(double score) {
  if (!std::isfinite(score)) throw NumericError("influence: non-finite score");
}

std::vector<std::string> reads_of(const ad::LossFunction& loss) {
  return std::vector<std::string>(loss.reads().begin(), loss.reads().end());
}

}  // namespace

InfluenceEngine::InfluenceEngine(const TwoStageModel& model, const Dataset& Z, const Dataset& X,
                                 const Checkpoint& pretrain_ckpt, const Checkpoint& finetune_ckpt,
                                 InfluenceConfig cfg)
    : model_(&model),
      pretrain_data_(&Z),
      finetune_data_(&X),
      pretrain_ckpt_(&pretrain_ckpt),
      finetune_ckpt_(&finetune_ckpt),
      cfg_(cfg),
      pretrain_wrt_(reads_of(model.pretrain_loss())),
      joint_wrt_{kSegTheta, kSegW},
      pretrain_objective_(model.pretrain_loss(), Z, pretrain_wrt_),
      finetune_objective_(model.finetune_loss(), X, {kSegTheta}),
      finetune_objective_prox_(model.finetune_loss(), X, joint_wrt_) {
  if (pretrain_ckpt.stage != Stage::Pretrain) {
    throw ConfigError("influence: first checkpoint must come from the pretrain stage");
  }
  if (finetune_ckpt.stage != Stage::Finetune) {
    throw ConfigError("influence: second checkpoint must come from the finetune stage");
  }
  if (!pretrain_ckpt.converged) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "pretrain checkpoint not converged (grad_norm=%.3e); first-order "
                  "conditions may not hold",
                  pretrain_ckpt.grad_norm);
    warnings_.push_back(buf);
  }

  // Case-2 system matrix: finetune Hessian over (Theta, W) plus 2*alpha on
  // the W diagonal block, realized as the Hessian of F + alpha*|W - Wbar|^2.
  ProximalTether tether;
  tether.segment = kSegW;
  auto wbar = pretrain_ckpt.params.slice(kSegW);
  tether.reference.assign(wbar.begin(), wbar.end());
  tether.alpha = cfg_.alpha;
  finetune_objective_prox_.set_proximal(std::move(tether));

  // A subsample request larger than the dataset means "use everything";
  // the oracle itself rejects oversized requests.
  SolverConfig pre_cfg = cfg_.pretrain_solver;
  if (pre_cfg.hessian_subsample > Z.size()) pre_cfg.hessian_subsample = 0;
  SolverConfig ft_cfg = cfg_.finetune_solver;
  if (ft_cfg.hessian_subsample > X.size()) ft_cfg.hessian_subsample = 0;

  pretrain_hvp_ = subsampled_hvp_oracle(pretrain_objective_, pretrain_ckpt.params, pre_cfg);
  finetune_theta_hvp_ = subsampled_hvp_oracle(finetune_objective_, finetune_ckpt.params, ft_cfg);
  joint_hvp_ = subsampled_hvp_oracle(finetune_objective_prox_, finetune_ckpt.params, ft_cfg);
}

ad::Batch InfluenceEngine::single_example(const Dataset& ds, long id) const {
  if (id < 0 || id >= ds.size()) throw ConfigError("influence: example id out of range");
  ad::Batch b;
  b.x = ds.features.row_ptr(static_cast<std::size_t>(id));
  b.y = ds.targets.data() + id;
  b.w = nullptr;
  b.n = 1;
  b.dim = ds.dim();
  b.scale = 1.0;
  return b;
}

std::vector<double> InfluenceEngine::pretrain_example_grad(long z_id) const {
  return ad::grad(model_->pretrain_loss(), pretrain_ckpt_->params,
                  single_example(*pretrain_data_, z_id), pretrain_wrt_);
}

std::pair<std::vector<double>, SolveReport> InfluenceEngine::influence_z_w(long z_id) const {
  std::vector<double> gz = pretrain_example_grad(z_id);
  auto [x, report] = solve_ihvp(pretrain_hvp_, gz, cfg_.pretrain_solver);
  for (double& v : x) v = -v;
  return {std::move(x), report};
}

void InfluenceEngine::bind_test_set(const Dataset& test) {
  if (test_data_ != &test) {
    fixed_cache_.clear();
    updated_cache_.clear();
    test_data_ = &test;
  }
}

const InfluenceEngine::CachedTestVectors& InfluenceEngine::test_vectors_fixed(const Dataset& test,
                                                                              long x_id) {
  bind_test_set(test);
  auto it = fixed_cache_.find(x_id);
  if (it != fixed_cache_.end()) return it->second;

  const ParamVector& ft = finetune_ckpt_->params;
  ad::Batch xt = single_example(test, x_id);
  const std::string theta_only[] = {kSegTheta};
  const std::string w_only[] = {kSegW};
  std::vector<double> gtheta =
      ad::grad(model_->finetune_eval_loss(), ft, xt, theta_only);
  std::vector<double> gw = ad::grad(model_->finetune_eval_loss(), ft, xt, w_only);

  CachedTestVectors entry;
  std::vector<double> v1;
  if (cfg_.identity_hessian) {
    v1 = gtheta;
    entry.finetune_report = identity_report();
  } else {
    auto [sol, report] = solve_ihvp(finetune_theta_hvp_, gtheta, cfg_.finetune_solver);
    v1 = std::move(sol);
    entry.finetune_report = report;
  }

  // W-space coupling vector V1' d2F/dTheta dW - df/dW, zero-padded over U
  // to pretrain-parameter shape.
  std::vector<double> wvec = finetune_objective_.cross_hvp(ft, kSegW, kSegTheta, v1);
  for (std::size_t i = 0; i < wvec.size(); ++i) wvec[i] -= gw[i];

  std::vector<double> rhs(pretrain_ckpt_->params.total_length(pretrain_wrt_), 0.0);
  for (std::size_t i = 0; i < wvec.size(); ++i) rhs[i] = wvec[i];

  if (cfg_.identity_hessian) {
    entry.v2 = std::move(rhs);
    entry.pretrain_report = identity_report();
  } else {
    auto [sol, report] = solve_ihvp(pretrain_hvp_, rhs, cfg_.pretrain_solver);
    entry.v2 = std::move(sol);
    entry.pretrain_report = report;
  }
  return fixed_cache_.emplace(x_id, std::move(entry)).first->second;
}

std::vector<InfluenceRecord> InfluenceEngine::influence_fixed(std::span<const long> z_ids,
                                                              const Dataset& test,
                                                              std::span<const long> x_ids,
                                                              int jobs) {
  if (finetune_ckpt_->mode != FinetuneMode::FixedW) {
    throw ConfigError("influence_fixed: finetune checkpoint was not trained with fixed_W");
  }
  // Shared per-test-point solves first; the cache is read-only afterwards.
  std::vector<const CachedTestVectors*> tvs;
  tvs.reserve(x_ids.size());
  for (long x : x_ids) tvs.push_back(&test_vectors_fixed(test, x));

  const std::size_t nx = x_ids.size();
  std::vector<InfluenceRecord> records(z_ids.size() * nx);
  parallel_for(z_ids.size(), jobs, [&](std::size_t zi) {
    const long z = z_ids[zi];
    std::vector<double> gz = pretrain_example_grad(z);
    for (std::size_t xi = 0; xi < nx; ++xi) {
      InfluenceRecord& rec = records[zi * nx + xi];
      rec.z_id = z;
      rec.x_id = x_ids[xi];
      rec.mode = FinetuneMode::FixedW;
      rec.score = dot(tvs[xi]->v2, gz);
      check_score(rec.score);
      rec.finetune_report = tvs[xi]->finetune_report;
      rec.pretrain_report = tvs[xi]->pretrain_report;
    }
  });
  return records;
}

const InfluenceEngine::CachedTestVectors& InfluenceEngine::test_vectors_updated(
    const Dataset& test, long x_id) {
  bind_test_set(test);
  auto it = updated_cache_.find(x_id);
  if (it != updated_cache_.end()) return it->second;

  const ParamVector& ft = finetune_ckpt_->params;
  ad::Batch xt = single_example(test, x_id);
  std::vector<double> gjoint = ad::grad(model_->finetune_eval_loss(), ft, xt, joint_wrt_);

  CachedTestVectors entry;
  std::vector<double> q;
  if (cfg_.identity_hessian) {
    q = gjoint;
    entry.finetune_report = identity_report();
  } else {
    auto [sol, report] = solve_ihvp(joint_hvp_, gjoint, cfg_.finetune_solver);
    q = std::move(sol);
    entry.finetune_report = report;
  }

  // W block of the joint solve, zero-padded over U.
  const std::size_t theta_len = ft.segment(kSegTheta).length;
  const std::size_t w_len = ft.segment(kSegW).length;
  std::vector<double> rhs(pretrain_ckpt_->params.total_length(pretrain_wrt_), 0.0);
  for (std::size_t i = 0; i < w_len; ++i) rhs[i] = q[theta_len + i];

  std::vector<double> u;
  if (cfg_.identity_hessian) {
    u = rhs;
    entry.pretrain_report = identity_report();
  } else {
    auto [sol, report] = solve_ihvp(pretrain_hvp_, rhs, cfg_.pretrain_solver);
    u = std::move(sol);
    entry.pretrain_report = report;
  }
  // score(z) = -2*alpha * <u, dg(z)>; fold the constants in here.
  for (double& v : u) v *= -2.0 * cfg_.alpha;
  entry.v2 = std::move(u);
  return updated_cache_.emplace(x_id, std::move(entry)).first->second;
}

std::vector<InfluenceRecord> InfluenceEngine::influence_updated(std::span<const long> z_ids,
                                                                const Dataset& test,
                                                                std::span<const long> x_ids,
                                                                int jobs) {
  if (finetune_ckpt_->mode != FinetuneMode::UpdateW) {
    throw ConfigError("influence_updated: finetune checkpoint was not trained with update_W");
  }
  if (cfg_.alpha <= 0.0) {
    throw ConfigError(
        "influence_updated: alpha must be positive (the block system degenerates and the score "
        "is identically zero at alpha = 0)");
  }
  if (finetune_ckpt_->proximal_alpha != cfg_.alpha && !alpha_warned_) {
    alpha_warned_ = true;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "finetune checkpoint trained with proximal_alpha=%g but influence uses "
                  "alpha=%g; the proximal approximation only approximately matches training",
                  finetune_ckpt_->proximal_alpha, cfg_.alpha);
    warnings_.push_back(buf);
  }
  std::vector<const CachedTestVectors*> tvs;
  tvs.reserve(x_ids.size());
  for (long x : x_ids) tvs.push_back(&test_vectors_updated(test, x));

  const std::size_t nx = x_ids.size();
  std::vector<InfluenceRecord> records(z_ids.size() * nx);
  parallel_for(z_ids.size(), jobs, [&](std::size_t zi) {
    const long z = z_ids[zi];
    std::vector<double> gz = pretrain_example_grad(z);
    for (std::size_t xi = 0; xi < nx; ++xi) {
      InfluenceRecord& rec = records[zi * nx + xi];
      rec.z_id = z;
      rec.x_id = x_ids[xi];
      rec.mode = FinetuneMode::UpdateW;
      rec.score = dot(tvs[xi]->v2, gz);
      check_score(rec.score);
      rec.finetune_report = tvs[xi]->finetune_report;
      rec.pretrain_report = tvs[xi]->pretrain_report;
    }
  });
  return records;
}

InfluenceRecord InfluenceEngine::influence_updated_direct(long z_id, const Dataset& test,
                                                          long x_id) {
  if (finetune_ckpt_->mode != FinetuneMode::UpdateW) {
    throw ConfigError("influence_updated: finetune checkpoint was not trained with update_W");
  }
  if (cfg_.alpha <= 0.0) throw ConfigError("influence_updated: alpha must be positive");

  auto [izw, pretrain_report] = influence_z_w(z_id);

  const ParamVector& ft = finetune_ckpt_->params;
  const std::size_t theta_len = ft.segment(kSegTheta).length;
  const std::size_t w_len = ft.segment(kSegW).length;
  // rhs = [0; 2*alpha * dWbar/deps] over (Theta, W).
  std::vector<double> rhs(theta_len + w_len, 0.0);
  for (std::size_t i = 0; i < w_len; ++i) rhs[theta_len + i] = 2.0 * cfg_.alpha * izw[i];

  std::vector<double> delta;
  SolveReport finetune_report;
  if (cfg_.identity_hessian) {
    delta = rhs;
    finetune_report = identity_report();
  } else {
    auto [sol, report] = solve_ihvp(joint_hvp_, rhs, cfg_.finetune_solver);
    delta = std::move(sol);
    finetune_report = report;
  }

  std::vector<double> gjoint = ad::grad(model_->finetune_eval_loss(), ft,
                                        single_example(test, x_id), joint_wrt_);
  InfluenceRecord rec;
  rec.z_id = z_id;
  rec.x_id = x_id;
  rec.mode = FinetuneMode::UpdateW;
  rec.score = dot(gjoint, delta);
  check_score(rec.score);
  rec.finetune_report = finetune_report;
  rec.pretrain_report = pretrain_report;
  return rec;
}

double InfluenceEngine::group_influence(std::span<const long> z_ids, const Dataset& test,
                                        std::span<const long> x_ids, FinetuneMode mode) {
  std::vector<InfluenceRecord> records = (mode == FinetuneMode::FixedW)
                                             ? influence_fixed(z_ids, test, x_ids)
                                             : influence_updated(z_ids, test, x_ids);
  double total = 0.0;
  for (const InfluenceRecord& rec : records) total += rec.score;
  return total;
}

}  // namespace msi
