#include "support/oracles.hpp"

#include <cmath>
#include <stdexcept>

namespace msi::testing {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double rel_err(std::span<const double> got, std::span<const double> want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

namespace {

ParamVector shifted(const ParamVector& params, std::span<const std::string> wrt,
                    std::span<const double> delta) {
  ParamVector out = params;
  std::size_t cursor = 0;
  for (const std::string& name : wrt) {
    auto seg = out.slice(name);
    for (std::size_t i = 0; i < seg.size(); ++i) seg[i] += delta[cursor + i];
    cursor += seg.size();
  }
  return out;
}

}  // namespace

std::vector<double> fd_grad(const ad::LossFunction& loss, const ParamVector& params,
                            const ad::Batch& batch, std::span<const std::string> wrt, double h) {
  const std::size_t p = params.total_length(wrt);
  std::vector<double> g(p, 0.0), delta(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    delta[i] = h;
    const double up = ad::value(loss, shifted(params, wrt, delta), batch);
    delta[i] = -h;
    const double down = ad::value(loss, shifted(params, wrt, delta), batch);
    delta[i] = 0.0;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<double> fd_hvp(const ad::LossFunction& loss, const ParamVector& params,
                           const ad::Batch& batch, std::span<const std::string> wrt,
                           std::span<const double> v, double h) {
  std::vector<double> delta(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) delta[i] = h * v[i];
  std::vector<double> gup = ad::grad(loss, shifted(params, wrt, delta), batch, wrt);
  for (std::size_t i = 0; i < v.size(); ++i) delta[i] = -h * v[i];
  std::vector<double> gdown = ad::grad(loss, shifted(params, wrt, delta), batch, wrt);
  for (std::size_t i = 0; i < gup.size(); ++i) gup[i] = (gup[i] - gdown[i]) / (2.0 * h);
  return gup;
}

std::vector<double> sym_eigenvalues(const Tensor& a, int sweeps) {
  const std::size_t n = a.rows();
  Tensor m = a;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    }
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double app = m.at(p, p), aqq = m.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = m.at(k, p), akq = m.at(k, q);
          m.at(k, p) = c * akp - s * akq;
          m.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = m.at(p, k), aqk = m.at(q, k);
          m.at(p, k) = c * apk - s * aqk;
          m.at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eigs(n);
  for (std::size_t i = 0; i < n; ++i) eigs[i] = m.at(i, i);
  return eigs;
}

Tensor random_orthogonal(int n, Rng& rng) {
  // Gram-Schmidt on a Gaussian matrix.
  Tensor q = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  for (auto& v : q.data) v = rng.next_gaussian();
  for (int col = 0; col < n; ++col) {
    for (int prev = 0; prev < col; ++prev) {
      double proj = 0.0;
      for (int r = 0; r < n; ++r) proj += q.at(r, col) * q.at(r, prev);
      for (int r = 0; r < n; ++r) q.at(r, col) -= proj * q.at(r, prev);
    }
    double norm = 0.0;
    for (int r = 0; r < n; ++r) norm += q.at(r, col) * q.at(r, col);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("random_orthogonal: degenerate draw");
    for (int r = 0; r < n; ++r) q.at(r, col) /= norm;
  }
  return q;
}

Tensor symmetric_with_spectrum(std::span<const double> eigs, Rng& rng) {
  const int n = static_cast<int>(eigs.size());
  Tensor q = random_orthogonal(n, rng);
  Tensor out = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += q.at(i, k) * eigs[k] * q.at(j, k);
      out.at(i, j) = acc;
    }
  }
  // Exact symmetry despite rounding.
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (out.at(i, j) + out.at(j, i));
      out.at(i, j) = avg;
      out.at(j, i) = avg;
    }
  }
  return out;
}

double newton_minimize(const Objective& objective, ParamVector& params, int max_iters,
                       double grad_tol) {
  const auto& wrt = objective.wrt();
  for (int it = 0; it < max_iters; ++it) {
    std::vector<double> g;
    objective.value_and_grad(params, g);
    if (norm2(g) <= grad_tol) break;
    Tensor h = dense_hessian(objective, params);
    double tau = 0.0;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Tensor hd = h;
      for (std::size_t i = 0; i < hd.rows(); ++i) hd.at(i, i) += tau;
      std::vector<double> step;
      if (lu_solve(hd, g, step)) {
        std::vector<double> theta = params.gather(wrt);
        for (std::size_t i = 0; i < step.size(); ++i) theta[i] -= step[i];
        ParamVector cand = params;
        cand.scatter(wrt, theta);
        const double before = objective.value(params);
        const double after = objective.value(cand);
        if (std::isfinite(after) && after <= before + 1e-13 * (std::fabs(before) + 1.0)) {
          params = std::move(cand);
          break;
        }
      }
      tau = tau == 0.0 ? 1e-8 : tau * 10.0;
    }
  }
  return objective.value(params);
}

}  // namespace msi::testing
