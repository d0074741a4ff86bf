#include "msinfluence/validation.hpp"

#include <cmath>
#include <stdexcept>

#include "msinfluence/common.hpp"

namespace msi {

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson_r: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("pearson_r: need at least two pairs");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson_r: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

Validator::Validator(const TwoStageModel& model, const Dataset& Z, const Dataset& X,
                     const Dataset& test, const Checkpoint& pretrain_ckpt,
                     const Checkpoint& finetune_ckpt, FinetuneMode mode, TruthConfig cfg)
    : model_(&model),
      pretrain_data_(&Z),
      finetune_data_(&X),
      test_data_(&test),
      pretrain_ckpt_(&pretrain_ckpt),
      finetune_ckpt_(&finetune_ckpt),
      mode_(mode),
      cfg_(std::move(cfg)) {
  base_test_loss_ = model.finetune_loss_sum(finetune_ckpt.params, test);
}

namespace {

Checkpoint retrain_both(const TwoStageModel& model, const Dataset& Z, const Dataset& X,
                        const Checkpoint* pretrain_ckpt, const Checkpoint* finetune_ckpt,
                        FinetuneMode mode, const TruthConfig& cfg,
                        std::span<const double> weights, bool warm_start) {
  Checkpoint new_pretrain = train_pretrain(model, Z, cfg.pretrain, weights,
                                           warm_start ? &pretrain_ckpt->params : nullptr);
  if (!std::isfinite(new_pretrain.objective_value)) {
    throw ScenarioError("validation: perturbed pretraining diverged");
  }
  Checkpoint new_finetune = train_finetune(model, X, new_pretrain, mode, cfg.finetune,
                                           warm_start ? &finetune_ckpt->params : nullptr);
  if (!std::isfinite(new_finetune.objective_value)) {
    throw ScenarioError("validation: perturbed finetuning diverged");
  }
  return new_finetune;
}

}  // namespace

double Validator::retrained_test_loss(std::span<const double> weights, bool warm_start) const {
  Checkpoint ckpt = retrain_both(*model_, *pretrain_data_, *finetune_data_, pretrain_ckpt_,
                                 finetune_ckpt_, mode_, cfg_, weights, warm_start);
  return model_->finetune_loss_sum(ckpt.params, *test_data_);
}

std::vector<double> Validator::retrained_test_losses(std::span<const double> weights,
                                                     bool warm_start) const {
  Checkpoint ckpt = retrain_both(*model_, *pretrain_data_, *finetune_data_, pretrain_ckpt_,
                                 finetune_ckpt_, mode_, cfg_, weights, warm_start);
  return model_->finetune_example_losses(ckpt.params, *test_data_);
}

std::pair<double, double> Validator::retrained_loss_and_accuracy(std::span<const double> weights,
                                                                 bool warm_start) const {
  Checkpoint ckpt = retrain_both(*model_, *pretrain_data_, *finetune_data_, pretrain_ckpt_,
                                 finetune_ckpt_, mode_, cfg_, weights, warm_start);
  return {model_->finetune_loss_sum(ckpt.params, *test_data_),
          model_->finetune_accuracy(ckpt.params, *test_data_)};
}

std::vector<double> Validator::base_test_losses() const {
  return model_->finetune_example_losses(finetune_ckpt_->params, *test_data_);
}

double Validator::loo_truth(long z_id) const {
  const int m = pretrain_data_->size();
  if (z_id < 0 || z_id >= m) throw ScenarioError("loo_truth: example id out of range");
  std::vector<double> weights(m, 1.0);
  weights[z_id] = 0.0;
  return retrained_test_loss(weights, /*warm_start=*/true) - base_test_loss_;
}

double Validator::epsilon_truth(long z_id, double eps) const {
  const int m = pretrain_data_->size();
  if (z_id < 0 || z_id >= m) throw ScenarioError("epsilon_truth: example id out of range");
  if (eps <= 0.0) throw ScenarioError("epsilon_truth: eps must be > 0");
  std::vector<double> weights(m, 1.0);
  weights[z_id] = 1.0 + m * eps;
  const double plus = retrained_test_loss(weights, /*warm_start=*/true);
  weights[z_id] = 1.0 - m * eps;
  const double minus = retrained_test_loss(weights, /*warm_start=*/true);
  return (plus - minus) / (2.0 * eps);
}

}  // namespace msi
