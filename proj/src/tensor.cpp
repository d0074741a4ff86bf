#include "msinfluence/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace msi {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
  if (shape_product(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape does not match data length");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_in) {
  std::size_t n = shape_product(shape_in);
  return Tensor(std::move(shape_in), std::vector<double>(n, 0.0));
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace msi
