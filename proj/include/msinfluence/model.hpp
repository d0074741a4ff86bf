#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "msinfluence/autodiff.hpp"
#include "msinfluence/dataset.hpp"
#include "msinfluence/params.hpp"

namespace msi {

enum class Activation { Tanh, Identity };

struct ModelArch {
  int input_dim = 0;
  // Widths of the embedding layers (segment W). Empty means the identity
  // embedding: both heads act on the raw features and W has length zero.
  std::vector<int> embed_dims;
  int num_pretrain_classes = 2;
  int num_finetune_classes = 2;
  Activation activation = Activation::Tanh;
  // Whether the final embedding layer output passes through the activation.
  // The multinomial-logistic configuration keeps this off so the pretrain
  // objective stays convex.
  bool embed_output_activation = true;
  // Identity pretrain head: the embedding output is used directly as the
  // pretrain logits and segment U is empty. Requires the last embedding
  // width to equal num_pretrain_classes.
  bool identity_pretrain_head = false;
  // Per-example ridge terms folded into the losses: g gains
  // 0.5*l2_pretrain*(|W|^2+|U|^2) and the finetune training loss f gains
  // 0.5*l2_finetune*(|W|^2+|Theta|^2). They make the desk-scale optima
  // unique: softmax logits are shift invariant and the bilinear two-stage
  // coupling leaves flat directions, so the unregularized Hessians are
  // singular. The evaluation loss carries no ridge.
  double l2_pretrain = 0.0;
  double l2_finetune = 0.0;
  std::uint64_t init_seed = 1;
};

// A parameter block inside a segment, viewed as a (rows x cols) matrix.
struct LayerBlock {
  std::string segment;
  std::size_t sub_offset = 0;
  int rows = 0;
  int cols = 0;
};

// Two-stage classifier: embedding (segment W, tanh MLP or identity), a
// pretrain head (segment U) and a finetune head (segment Theta), with
// softmax cross-entropy losses. g reads (W, U) only and f reads (W, Theta)
// only; the losses enforce that by construction.
class TwoStageModel {
 public:
  explicit TwoStageModel(ModelArch arch);

  const ModelArch& arch() const { return arch_; }

  // Deterministic (seeded) initial parameters: Glorot-uniform weights,
  // zero biases.
  ParamVector init_params() const;

  // Pretrain loss g: cross-entropy of the pretrain head plus its ridge.
  const ad::LossFunction& pretrain_loss() const { return *pretrain_loss_; }
  // Finetune training loss f: cross-entropy of the finetune head plus the
  // head ridge.
  const ad::LossFunction& finetune_loss() const { return *finetune_loss_; }
  // Plain cross-entropy of the finetune head; the quantity measured on test
  // examples and differentiated in the influence formulas.
  const ad::LossFunction& finetune_eval_loss() const { return *finetune_eval_loss_; }

  int embed_out_dim() const { return embed_out_dim_; }

  // Batch over a whole dataset (weights may be empty = uniform).
  static ad::Batch batch_of(const Dataset& ds, const double* weights, double scale);

  // Finetune-head logits for every example (no gradients).
  Tensor finetune_logits(const ParamVector& params, const Dataset& ds) const;

  // Summed plain cross-entropy of the finetune head over a dataset.
  double finetune_loss_sum(const ParamVector& params, const Dataset& ds) const;

  // Per-example plain cross-entropy of the finetune head.
  std::vector<double> finetune_example_losses(const ParamVector& params, const Dataset& ds) const;

  double finetune_accuracy(const ParamVector& params, const Dataset& ds) const;

  const std::vector<LayerBlock>& embed_blocks() const { return embed_blocks_; }

 private:
  ModelArch arch_;
  int embed_out_dim_ = 0;
  std::vector<LayerBlock> embed_blocks_;   // weight+bias pairs, segment W
  std::vector<LayerBlock> u_blocks_;       // segment U (empty for identity head)
  std::vector<LayerBlock> theta_blocks_;   // segment Theta
  std::size_t w_len_ = 0, u_len_ = 0, theta_len_ = 0;

  std::unique_ptr<ad::LossFunction> pretrain_loss_;
  std::unique_ptr<ad::LossFunction> finetune_loss_;
  std::unique_ptr<ad::LossFunction> finetune_eval_loss_;
};

// Convenience factory mirroring the arch description.
TwoStageModel build_model(const ModelArch& arch);

}  // namespace msi
