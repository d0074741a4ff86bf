#pragma once

#include <span>
#include <vector>

#include "msinfluence/tensor.hpp"

namespace msi {

// Dense LU solve with partial pivoting; A is (n x n) row-major and is copied.
// Returns false if A is numerically singular.
bool lu_solve(const Tensor& a, std::span<const double> b, std::vector<double>& x);

}  // namespace msi
