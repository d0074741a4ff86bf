#include "msinfluence/idx_io.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "msinfluence/common.hpp"

namespace msi {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw ConfigError("load_idx: truncated header in " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("load_idx: cannot open " + path);
  return in;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::set<int>& class_filter, int limit) {
  std::ifstream img = open_binary(images_path);
  if (read_be_u32(img, images_path) != kImagesMagic) {
    throw ConfigError("load_idx: bad magic number in " + images_path);
  }
  const std::uint32_t n_images = read_be_u32(img, images_path);
  const std::uint32_t rows = read_be_u32(img, images_path);
  const std::uint32_t cols = read_be_u32(img, images_path);
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;

  std::ifstream lab = open_binary(labels_path);
  if (read_be_u32(lab, labels_path) != kLabelsMagic) {
    throw ConfigError("load_idx: bad magic number in " + labels_path);
  }
  const std::uint32_t n_labels = read_be_u32(lab, labels_path);
  if (n_images != n_labels) {
    throw ConfigError("load_idx: image/label count mismatch (" + std::to_string(n_images) +
                      " vs " + std::to_string(n_labels) + ")");
  }

  std::vector<unsigned char> pixel_buf(pixels);
  std::vector<std::vector<double>> kept_rows;
  std::vector<int> kept_labels;
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!img.read(reinterpret_cast<char*>(pixel_buf.data()), static_cast<std::streamsize>(pixels))) {
      throw ConfigError("load_idx: truncated image payload in " + images_path);
    }
    char label_byte = 0;
    if (!lab.read(&label_byte, 1)) {
      throw ConfigError("load_idx: truncated label payload in " + labels_path);
    }
    const int label = static_cast<unsigned char>(label_byte);
    if (!class_filter.count(label)) continue;
    std::vector<double> row(pixels);
    for (std::size_t p = 0; p < pixels; ++p) row[p] = pixel_buf[p] / 255.0;
    kept_rows.push_back(std::move(row));
    kept_labels.push_back(label);
    if (limit > 0 && static_cast<int>(kept_labels.size()) == limit) break;
  }

  Dataset ds;
  ds.role = Role::Pretrain;
  ds.class_set.assign(class_filter.begin(), class_filter.end());
  ds.features = Tensor::zeros({kept_rows.size(), pixels});
  ds.labels = kept_labels;
  ds.targets.resize(kept_labels.size());
  for (std::size_t r = 0; r < kept_rows.size(); ++r) {
    for (std::size_t p = 0; p < pixels; ++p) ds.features.at(r, p) = kept_rows[r][p];
    int target = 0;
    for (int c : ds.class_set) {
      if (c == kept_labels[r]) break;
      ++target;
    }
    ds.targets[r] = target;
  }
  return ds;
}

}  // namespace msi
