#pragma once

#include <cstddef>
#include <vector>

namespace msi {

// Dense row-major tensor of doubles. Feature batches are rank-2
// {rows, cols}; dense Hessians are square rank-2.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in);

  static Tensor zeros(std::vector<std::size_t> shape_in);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  const double* row_ptr(std::size_t i) const { return data.data() + i * cols(); }

  bool all_finite() const;
};

}  // namespace msi
