#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msinfluence/autodiff.hpp"
#include "msinfluence/dataset.hpp"
#include "msinfluence/model.hpp"

namespace msi {

// Quadratic tether alpha*|seg - reference|^2 added to a training objective
// (the updated-embedding finetuning approximation).
struct ProximalTether {
  std::string segment = kSegW;
  std::vector<double> reference;
  double alpha = 0.0;
};

// Weighted empirical objective over one dataset:
//   scale * sum_i w_i * loss(example_i)  [+ alpha*|seg - ref|^2]
// with scale defaulting to 1/n. Setting w_z = 0 leaves example z out;
// w_z = 1 + n*eps realizes the epsilon-perturbed objective.
class Objective {
 public:
  Objective(const ad::LossFunction& loss, const Dataset& data,
            std::vector<std::string> wrt);

  void set_weights(std::vector<double> weights);
  void set_scale(double scale) { scale_ = scale; }
  void set_proximal(ProximalTether tether);

  const std::vector<std::string>& wrt() const { return wrt_; }
  std::size_t dim(const ParamVector& params) const;
  const Dataset& data() const { return *data_; }
  std::span<const double> weights() const { return weights_; }
  double scale() const { return scale_; }

  double value(const ParamVector& params) const;
  double value_and_grad(const ParamVector& params, std::vector<double>& grad_out) const;
  std::vector<double> grad(const ParamVector& params) const;
  std::vector<double> hvp(const ParamVector& params, std::span<const double> v) const;
  std::vector<double> cross_hvp(const ParamVector& params, const std::string& row_seg,
                                const std::string& col_seg, std::span<const double> v) const;

  // Same objective over a subset of the examples, reweighted as an average
  // over the subset. Row data is materialized once.
  Objective restricted_to(std::span<const int> indices) const;

  // Minibatch gradient: average of w_i * loss_i over the given rows (plus
  // the proximal term if present).
  double minibatch_value_and_grad(const ParamVector& params, std::span<const int> rows,
                                  std::vector<double>& grad_out) const;

 private:
  friend class ObjectiveLoss;

  const ad::LossFunction* loss_;
  const Dataset* data_;
  std::shared_ptr<const Dataset> owned_data_;  // set when restricted
  std::vector<std::string> wrt_;
  std::vector<double> weights_;  // empty = uniform 1
  double scale_ = 1.0;
  std::optional<ProximalTether> prox_;
  mutable std::shared_ptr<const ad::LossFunction> wrapped_;  // loss + proximal term

  const ad::LossFunction& effective_loss() const;
  ad::Batch full_batch() const;
};

}  // namespace msi
