#include "msinfluence/objective.hpp"

#include <stdexcept>

#include "msinfluence/common.hpp"

namespace msi {

// Wraps the data loss and appends the proximal term over every leaf of the
// tethered segment, so the trainer and all Hessian oracles see one objective.
class ObjectiveLoss final : public ad::LossFunction {
 public:
  explicit ObjectiveLoss(const Objective* owner) : owner_(owner) {}

  std::span<const std::string> reads() const override { return owner_->loss_->reads(); }

  int build_graph(ad::BuildCtx<double>& ctx, const ad::Batch& batch) const override {
    return build_impl(ctx, batch);
  }
  int build_graph(ad::BuildCtx<ad::Dual>& ctx, const ad::Batch& batch) const override {
    return build_impl(ctx, batch);
  }

 private:
  template <typename T>
  int build_impl(ad::BuildCtx<T>& ctx, const ad::Batch& batch) const {
    int total = owner_->loss_->build_graph(ctx, batch);
    const ProximalTether& prox = *owner_->prox_;
    if (prox.alpha == 0.0) return total;
    for (const ad::LeafInfo& leaf : ctx.leaves()) {
      if (leaf.segment != prox.segment) continue;
      int term = ctx.tape().sum_sq_diff(leaf.node, prox.reference.data() + leaf.sub_offset,
                                        prox.alpha);
      total = ctx.tape().add_scaled(total, term);
    }
    return total;
  }

  const Objective* owner_;
};

Objective::Objective(const ad::LossFunction& loss, const Dataset& data,
                     std::vector<std::string> wrt)
    : loss_(&loss), data_(&data), wrt_(std::move(wrt)) {
  scale_ = data.size() > 0 ? 1.0 / data.size() : 0.0;
}

void Objective::set_weights(std::vector<double> weights) {
  if (!weights.empty() && static_cast<int>(weights.size()) != data_->size()) {
    throw std::invalid_argument("Objective: weight vector length must match dataset size");
  }
  weights_ = std::move(weights);
}

void Objective::set_proximal(ProximalTether tether) {
  prox_ = std::move(tether);
  wrapped_ = std::make_shared<ObjectiveLoss>(this);
}

std::size_t Objective::dim(const ParamVector& params) const { return params.total_length(wrt_); }

const ad::LossFunction& Objective::effective_loss() const {
  // The wrapper captures `this`, so rebuild it on use in case the objective
  // was copied or moved since construction.
  if (prox_) {
    wrapped_ = std::make_shared<ObjectiveLoss>(this);
    return *wrapped_;
  }
  return *loss_;
}

ad::Batch Objective::full_batch() const {
  return TwoStageModel::batch_of(*data_, weights_.empty() ? nullptr : weights_.data(), scale_);
}

double Objective::value(const ParamVector& params) const {
  return ad::value(effective_loss(), params, full_batch());
}

double Objective::value_and_grad(const ParamVector& params, std::vector<double>& grad_out) const {
  return ad::value_and_grad(effective_loss(), params, full_batch(), wrt_, grad_out);
}

std::vector<double> Objective::grad(const ParamVector& params) const {
  std::vector<double> g;
  value_and_grad(params, g);
  return g;
}

std::vector<double> Objective::hvp(const ParamVector& params, std::span<const double> v) const {
  return ad::hvp(effective_loss(), params, full_batch(), wrt_, v);
}

std::vector<double> Objective::cross_hvp(const ParamVector& params, const std::string& row_seg,
                                         const std::string& col_seg,
                                         std::span<const double> v) const {
  return ad::cross_hvp(effective_loss(), params, full_batch(), row_seg, col_seg, v);
}

Objective Objective::restricted_to(std::span<const int> indices) const {
  auto sub = std::make_shared<Dataset>();
  sub->role = data_->role;
  sub->class_set = data_->class_set;
  sub->features = Tensor::zeros({indices.size(), data_->features.cols()});
  sub->labels.resize(indices.size());
  sub->targets.resize(indices.size());
  std::vector<double> sub_weights;
  if (!weights_.empty()) sub_weights.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int src = indices[r];
    for (std::size_t j = 0; j < data_->features.cols(); ++j) {
      sub->features.at(r, j) = data_->features.at(src, j);
    }
    sub->labels[r] = data_->labels[src];
    sub->targets[r] = data_->targets[src];
    if (!weights_.empty()) sub_weights[r] = weights_[src];
  }

  Objective out(*loss_, *sub, wrt_);
  out.owned_data_ = sub;
  out.data_ = out.owned_data_.get();
  out.set_weights(std::move(sub_weights));
  if (prox_) out.set_proximal(*prox_);
  return out;
}

double Objective::minibatch_value_and_grad(const ParamVector& params, std::span<const int> rows,
                                           std::vector<double>& grad_out) const {
  const std::size_t cols = data_->features.cols();
  std::vector<double> x(rows.size() * cols);
  std::vector<int> y(rows.size());
  std::vector<double> w(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int src = rows[r];
    const double* src_row = data_->features.row_ptr(src);
    for (std::size_t j = 0; j < cols; ++j) x[r * cols + j] = src_row[j];
    y[r] = data_->targets[src];
    w[r] = weights_.empty() ? 1.0 : weights_[src];
  }
  ad::Batch batch;
  batch.x = x.data();
  batch.y = y.data();
  batch.w = w.data();
  batch.n = static_cast<int>(rows.size());
  batch.dim = static_cast<int>(cols);
  batch.scale = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  return ad::value_and_grad(effective_loss(), params, batch, wrt_, grad_out);
}

}  // namespace msi
