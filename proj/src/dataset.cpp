#include "msinfluence/dataset.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "msinfluence/common.hpp"

namespace msi {

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("make_synthetic: num_classes must be >= 2");
  if (spec.per_class < 1) throw ConfigError("make_synthetic: per_class must be >= 1");
  if (spec.dim < 1) throw ConfigError("make_synthetic: dim must be >= 1");
  if (spec.noise_sigma <= 0.0) throw ConfigError("make_synthetic: noise_sigma must be > 0");
  if (spec.label_noise < 0.0 || spec.label_noise >= 1.0) {
    throw ConfigError("make_synthetic: label_noise must be in [0, 1)");
  }

  Rng rng(spec.class_means_seed);
  std::vector<double> means(static_cast<std::size_t>(spec.num_classes) * spec.dim);
  for (double& m : means) m = rng.next_gaussian();

  const int n = spec.num_classes * spec.per_class;
  Dataset ds;
  ds.features = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(spec.dim)});
  ds.labels.resize(n);
  ds.targets.resize(n);
  ds.class_set.resize(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) ds.class_set[c] = c;

  int row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i, ++row) {
      for (int j = 0; j < spec.dim; ++j) {
        ds.features.at(row, j) = means[static_cast<std::size_t>(c) * spec.dim + j] +
                                 spec.noise_sigma * rng.next_gaussian();
      }
      ds.labels[row] = c;
    }
  }
  if (spec.label_noise > 0.0) {
    for (int i = 0; i < n; ++i) {
      if (rng.next_unit() < spec.label_noise) {
        int flip = static_cast<int>(rng.next_below(spec.num_classes - 1));
        if (flip >= ds.labels[i]) ++flip;
        ds.labels[i] = flip;
      }
    }
  }
  ds.targets = ds.labels;
  ds.role = Role::Pretrain;
  return ds;
}

Dataset filter_classes(const Dataset& source, const std::vector<int>& class_set, Role role,
                       int limit) {
  std::map<int, int> target_of;
  for (std::size_t i = 0; i < class_set.size(); ++i) target_of[class_set[i]] = static_cast<int>(i);

  std::vector<int> keep;
  for (int i = 0; i < source.size(); ++i) {
    if (target_of.count(source.labels[i])) {
      keep.push_back(i);
      if (limit > 0 && static_cast<int>(keep.size()) == limit) break;
    }
  }

  Dataset out;
  out.role = role;
  out.class_set = class_set;
  out.features = Tensor::zeros({keep.size(), source.features.cols()});
  out.labels.resize(keep.size());
  out.targets.resize(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const int src = keep[r];
    for (std::size_t j = 0; j < source.features.cols(); ++j) {
      out.features.at(r, j) = source.features.at(src, j);
    }
    out.labels[r] = source.labels[src];
    out.targets[r] = target_of[source.labels[src]];
  }
  return out;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& source, int first_count,
                                            Role first_role, Role second_role) {
  std::map<int, int> seen;
  std::vector<int> first_rows, second_rows;
  for (int i = 0; i < source.size(); ++i) {
    if (seen[source.labels[i]]++ < first_count) {
      first_rows.push_back(i);
    } else {
      second_rows.push_back(i);
    }
  }
  auto extract = [&](const std::vector<int>& rows, Role role) {
    Dataset out;
    out.role = role;
    out.class_set = source.class_set;
    out.features = Tensor::zeros({rows.size(), source.features.cols()});
    out.labels.resize(rows.size());
    out.targets.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < source.features.cols(); ++j) {
        out.features.at(r, j) = source.features.at(rows[r], j);
      }
      out.labels[r] = source.labels[rows[r]];
      out.targets[r] = source.targets[rows[r]];
    }
    return out;
  };
  return {extract(first_rows, first_role), extract(second_rows, second_role)};
}

}  // namespace msi
