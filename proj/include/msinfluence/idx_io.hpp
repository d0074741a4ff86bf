#pragma once

#include <set>
#include <string>

#include "msinfluence/dataset.hpp"

namespace msi {

// Loads an IDX image/label file pair (the MNIST container format):
// big-endian magic 0x00000803 for images, 0x00000801 for labels, dimension
// counts, then raw bytes. Pixels are scaled to [0, 1]. Only labels in
// `class_filter` are kept (its sorted order defines the target indices); at
// most `limit` matching examples are returned (0 = no limit), in file order.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::set<int>& class_filter, int limit = 0);

}  // namespace msi
