#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "msinfluence/tensor.hpp"

namespace msi {

enum class Role { Pretrain, FinetuneTrain, FinetuneTest };

// Labeled examples for one pipeline role. `labels` carries the original
// class ids (always members of `class_set`); `targets` maps each example to
// its index within `class_set`, which is what the classifier heads consume.
struct Dataset {
  Tensor features;  // {n, dim}
  std::vector<int> labels;
  std::vector<int> targets;
  std::vector<int> class_set;
  Role role = Role::Pretrain;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

struct SyntheticSpec {
  int num_classes = 2;
  int dim = 2;
  int per_class = 10;
  std::uint64_t class_means_seed = 1;
  double noise_sigma = 1.0;
  // Fraction of examples whose label is replaced by a different random
  // class. Off by default; used to plant genuinely harmful examples for the
  // cleansing study.
  double label_noise = 0.0;
};

// Gaussian clusters, one mean per class. Examples are grouped by class in
// index order (class 0 first). Byte-for-byte reproducible from the spec.
Dataset make_synthetic(const SyntheticSpec& spec);

// Keeps examples whose label is in `class_set` (given order defines the
// target indices), up to `limit` (0 = no limit), preserving example order.
Dataset filter_classes(const Dataset& source, const std::vector<int>& class_set, Role role,
                       int limit = 0);

// Deterministic split of a dataset into two parts with `first_count`
// examples per class in the first part (file order within each class).
std::pair<Dataset, Dataset> split_per_class(const Dataset& source, int first_count,
                                            Role first_role, Role second_role);

}  // namespace msi
