#include "msinfluence/linalg.hpp"

#include <cmath>
#include <utility>

namespace msi {

bool lu_solve(const Tensor& a, std::span<const double> b, std::vector<double>& x) {
  const std::size_t n = a.rows();
  Tensor m = a;
  x.assign(b.begin(), b.end());
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::fabs(m.at(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double cand = std::fabs(m.at(r, col));
      if (cand > best) {
        best = cand;
        pivot = r;
      }
    }
    if (best < 1e-300) return false;
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m.at(col, j), m.at(pivot, j));
      std::swap(x[col], x[pivot]);
    }
    const double inv = 1.0 / m.at(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m.at(r, col) * inv;
      if (f == 0.0) continue;
      m.at(r, col) = 0.0;
      for (std::size_t j = col + 1; j < n; ++j) m.at(r, j) -= f * m.at(col, j);
      x[r] -= f * x[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double acc = x[i];
    for (std::size_t j = i + 1; j < n; ++j) acc -= m.at(i, j) * x[j];
    x[i] = acc / m.at(i, i);
  }
  return true;
}

}  // namespace msi
