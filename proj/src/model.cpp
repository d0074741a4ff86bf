#include "msinfluence/model.hpp"

#include <cmath>
#include <stdexcept>

#include "msinfluence/common.hpp"

namespace msi {

namespace {

enum class LossKind { Pretrain, FinetuneTrain, FinetuneEval };

}  // namespace

// Self-contained loss builder: owns copies of the block layout so the parent
// model can be moved freely. Template over the tape scalar so the same code
// serves first- and second-order passes.
class ModelLoss final : public ad::LossFunction {
 public:
  ModelLoss(LossKind kind, const ModelArch& arch, std::vector<LayerBlock> embed,
            std::vector<LayerBlock> head)
      : kind_(kind), arch_(arch), embed_(std::move(embed)), head_(std::move(head)) {
    if (kind == LossKind::Pretrain) {
      reads_.push_back(kSegW);
      reads_.push_back(kSegU);
    } else {
      reads_.push_back(kSegW);
      reads_.push_back(kSegTheta);
    }
  }

  std::span<const std::string> reads() const override { return reads_; }

  int build_graph(ad::BuildCtx<double>& ctx, const ad::Batch& batch) const override {
    return build_impl(ctx, batch);
  }
  int build_graph(ad::BuildCtx<ad::Dual>& ctx, const ad::Batch& batch) const override {
    return build_impl(ctx, batch);
  }

 private:
  template <typename T>
  int build_impl(ad::BuildCtx<T>& ctx, const ad::Batch& batch) const {
    auto& tape = ctx.tape();

    int h = tape.constant(batch.x, batch.n, batch.dim);
    std::vector<int> ridge_leaves;

    for (std::size_t layer = 0; layer < embed_.size(); layer += 2) {
      const LayerBlock& wblk = embed_[layer];
      const LayerBlock& bblk = embed_[layer + 1];
      int w = ctx.param_leaf(wblk.segment, wblk.sub_offset, wblk.rows, wblk.cols);
      int b = ctx.param_leaf(bblk.segment, bblk.sub_offset, bblk.rows, bblk.cols);
      h = tape.linear(h, w, b);
      const bool last = layer + 2 == embed_.size();
      if ((!last || arch_.embed_output_activation) && arch_.activation == Activation::Tanh) {
        h = tape.tanh_op(h);
      }
      if (kind_ != LossKind::FinetuneEval) {
        ridge_leaves.push_back(w);
        ridge_leaves.push_back(b);
      }
    }

    int logits = h;
    if (!head_.empty()) {
      const LayerBlock& wblk = head_[0];
      const LayerBlock& bblk = head_[1];
      int w = ctx.param_leaf(wblk.segment, wblk.sub_offset, wblk.rows, wblk.cols);
      int b = ctx.param_leaf(bblk.segment, bblk.sub_offset, bblk.rows, bblk.cols);
      logits = tape.linear(h, w, b);
      if (kind_ != LossKind::FinetuneEval) {
        ridge_leaves.push_back(w);
        ridge_leaves.push_back(b);
      }
    }

    int ce = tape.cross_entropy(logits, batch.y);
    int total = tape.weighted_sum(ce, batch.w, batch.scale);

    const double l2 = (kind_ == LossKind::Pretrain)        ? arch_.l2_pretrain
                      : (kind_ == LossKind::FinetuneTrain) ? arch_.l2_finetune
                                                           : 0.0;
    if (l2 > 0.0) {
      // Per-example ridge share: sum_i w_i*scale * 0.5*l2*|params|^2.
      const double coeff = 0.5 * l2 * batch.weight_sum() * batch.scale;
      if (coeff != 0.0) {
        for (int leaf : ridge_leaves) {
          int term = tape.sum_sq(leaf, coeff);
          total = tape.add_scaled(total, term);
        }
      }
    }
    return total;
  }

  LossKind kind_;
  ModelArch arch_;
  std::vector<LayerBlock> embed_;
  std::vector<LayerBlock> head_;
  std::vector<std::string> reads_;
};

TwoStageModel::TwoStageModel(ModelArch arch) : arch_(std::move(arch)) {
  if (arch_.input_dim < 1) throw ConfigError("build_model: input_dim must be >= 1");
  for (int width : arch_.embed_dims) {
    if (width < 1) throw ConfigError("build_model: zero-width embedding layer");
  }
  if (arch_.num_pretrain_classes < 1 || arch_.num_finetune_classes < 1) {
    throw ConfigError("build_model: class counts must be >= 1");
  }

  int in = arch_.input_dim;
  std::size_t w_cursor = 0;
  for (int width : arch_.embed_dims) {
    embed_blocks_.push_back({kSegW, w_cursor, width, in});
    w_cursor += static_cast<std::size_t>(width) * in;
    embed_blocks_.push_back({kSegW, w_cursor, width, 1});
    w_cursor += static_cast<std::size_t>(width);
    in = width;
  }
  w_len_ = w_cursor;
  embed_out_dim_ = in;

  if (arch_.identity_pretrain_head) {
    if (embed_out_dim_ != arch_.num_pretrain_classes) {
      throw ConfigError(
          "build_model: identity pretrain head requires the embedding output width to equal "
          "num_pretrain_classes");
    }
    u_len_ = 0;
  } else {
    const int k = arch_.num_pretrain_classes;
    u_blocks_.push_back({kSegU, 0, k, embed_out_dim_});
    u_blocks_.push_back({kSegU, static_cast<std::size_t>(k) * embed_out_dim_, k, 1});
    u_len_ = static_cast<std::size_t>(k) * embed_out_dim_ + k;
  }

  {
    const int k = arch_.num_finetune_classes;
    theta_blocks_.push_back({kSegTheta, 0, k, embed_out_dim_});
    theta_blocks_.push_back({kSegTheta, static_cast<std::size_t>(k) * embed_out_dim_, k, 1});
    theta_len_ = static_cast<std::size_t>(k) * embed_out_dim_ + k;
  }

  pretrain_loss_ = std::make_unique<ModelLoss>(LossKind::Pretrain, arch_, embed_blocks_, u_blocks_);
  finetune_loss_ =
      std::make_unique<ModelLoss>(LossKind::FinetuneTrain, arch_, embed_blocks_, theta_blocks_);
  finetune_eval_loss_ =
      std::make_unique<ModelLoss>(LossKind::FinetuneEval, arch_, embed_blocks_, theta_blocks_);
}

ParamVector TwoStageModel::init_params() const {
  ParamVector params =
      ParamVector::zeros({{kSegW, w_len_}, {kSegU, u_len_}, {kSegTheta, theta_len_}});
  Rng rng(arch_.init_seed);
  auto init_blocks = [&](const std::vector<LayerBlock>& blocks, std::span<double> seg) {
    for (std::size_t i = 0; i < blocks.size(); i += 2) {
      const LayerBlock& wblk = blocks[i];
      const double limit = std::sqrt(6.0 / (wblk.rows + wblk.cols));
      for (int r = 0; r < wblk.rows * wblk.cols; ++r) {
        seg[wblk.sub_offset + r] = rng.next_uniform(-limit, limit);
      }
      // biases stay zero
    }
  };
  if (w_len_ > 0) init_blocks(embed_blocks_, params.slice(kSegW));
  if (u_len_ > 0) init_blocks(u_blocks_, params.slice(kSegU));
  init_blocks(theta_blocks_, params.slice(kSegTheta));
  return params;
}

ad::Batch TwoStageModel::batch_of(const Dataset& ds, const double* weights, double scale) {
  ad::Batch b;
  b.x = ds.features.data.data();
  b.y = ds.targets.data();
  b.w = weights;
  b.n = ds.size();
  b.dim = ds.dim();
  b.scale = scale;
  return b;
}

Tensor TwoStageModel::finetune_logits(const ParamVector& params, const Dataset& ds) const {
  ad::Tape<double> tape;
  ad::BuildCtx<double> ctx(tape, params);
  ad::Batch batch = batch_of(ds, nullptr, 1.0);

  int h = tape.constant(batch.x, batch.n, batch.dim);
  for (std::size_t layer = 0; layer < embed_blocks_.size(); layer += 2) {
    const LayerBlock& wblk = embed_blocks_[layer];
    const LayerBlock& bblk = embed_blocks_[layer + 1];
    int w = ctx.param_leaf(wblk.segment, wblk.sub_offset, wblk.rows, wblk.cols);
    int b = ctx.param_leaf(bblk.segment, bblk.sub_offset, bblk.rows, bblk.cols);
    h = tape.linear(h, w, b);
    const bool last = layer + 2 == embed_blocks_.size();
    if ((!last || arch_.embed_output_activation) && arch_.activation == Activation::Tanh) {
      h = tape.tanh_op(h);
    }
  }
  int w = ctx.param_leaf(theta_blocks_[0].segment, theta_blocks_[0].sub_offset,
                         theta_blocks_[0].rows, theta_blocks_[0].cols);
  int b = ctx.param_leaf(theta_blocks_[1].segment, theta_blocks_[1].sub_offset,
                         theta_blocks_[1].rows, theta_blocks_[1].cols);
  int logits = tape.linear(h, w, b);

  Tensor out = Tensor::zeros({static_cast<std::size_t>(batch.n),
                              static_cast<std::size_t>(arch_.num_finetune_classes)});
  auto vals = tape.values(logits);
  for (std::size_t i = 0; i < vals.size(); ++i) out.data[i] = vals[i];
  return out;
}

double TwoStageModel::finetune_loss_sum(const ParamVector& params, const Dataset& ds) const {
  if (ds.size() == 0) return 0.0;
  ad::Batch batch = batch_of(ds, nullptr, 1.0);
  return ad::value(*finetune_eval_loss_, params, batch);
}

std::vector<double> TwoStageModel::finetune_example_losses(const ParamVector& params,
                                                           const Dataset& ds) const {
  std::vector<double> losses(ds.size(), 0.0);
  if (ds.size() == 0) return losses;
  Tensor logits = finetune_logits(params, ds);
  const int k = arch_.num_finetune_classes;
  for (int i = 0; i < ds.size(); ++i) {
    double m = logits.at(i, 0);
    for (int j = 1; j < k; ++j) m = std::max(m, logits.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(logits.at(i, j) - m);
    losses[i] = m + std::log(denom) - logits.at(i, ds.targets[i]);
  }
  return losses;
}

double TwoStageModel::finetune_accuracy(const ParamVector& params, const Dataset& ds) const {
  if (ds.size() == 0) return 0.0;
  Tensor logits = finetune_logits(params, ds);
  int correct = 0;
  for (int i = 0; i < ds.size(); ++i) {
    int best = 0;
    for (int k = 1; k < arch_.num_finetune_classes; ++k) {
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    }
    if (best == ds.targets[i]) ++correct;
  }
  return static_cast<double>(correct) / ds.size();
}

TwoStageModel build_model(const ModelArch& arch) { return TwoStageModel(arch); }

}  // namespace msi
