#include "msinfluence/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "msinfluence/common.hpp"

namespace msi {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("solve_ihvp: NaN in ") + what);
  }
}

}  // namespace

std::pair<std::vector<double>, SolveReport> solve_ihvp(const HvpOracle& hvp_oracle,
                                                       std::span<const double> b,
                                                       const SolverConfig& cfg) {
  if (cfg.cg_tol <= 0.0) throw ConfigError("solve_ihvp: cg_tol must be > 0");
  if (cfg.cg_max_iters < 1) throw ConfigError("solve_ihvp: cg_max_iters must be >= 1");

  const std::size_t n = b.size();
  SolveReport report;
  std::vector<double> x(n, 0.0);

  const double norm_b = norm2(b);
  if (norm_b == 0.0) {
    report.converged = true;
    return {x, report};
  }

  std::vector<double> c = hvp_oracle(b);  // rhs of the squared system
  check_finite(c, "H*b");
  const double norm_c = norm2(c);
  const double lambda = cfg.damping_lambda;

  std::vector<double> r = c;  // residual of the squared system (x = 0)
  std::vector<double> p = r;
  std::vector<double> s(n, 0.0);  // H*x, carried incrementally
  double rr = dot(r, r);

  std::vector<double> best_x = x;
  double best_resid = 1.0;  // |H*0 - b|/|b|
  int it = 0;

  while (it < cfg.cg_max_iters) {
    ++it;
    std::vector<double> hp = hvp_oracle(p);
    check_finite(hp, "H*p");
    std::vector<double> ap = hvp_oracle(hp);
    check_finite(ap, "H*(H*p)");
    if (lambda != 0.0) {
      for (std::size_t i = 0; i < n; ++i) ap[i] += lambda * p[i];
    }
    const double pap = dot(p, ap);
    if (pap <= 0.0) break;  // p vanished; squared system is solved
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      s[i] += alpha * hp[i];
      r[i] -= alpha * ap[i];
    }
    double resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = s[i] - b[i];
      resid += d * d;
    }
    resid = std::sqrt(resid) / norm_b;
    if (resid < best_resid) {
      best_resid = resid;
      best_x = x;
    }
    if (resid <= cfg.cg_tol) break;
    const double rr_new = dot(r, r);
    if (norm_c > 0.0 && std::sqrt(rr_new) <= 1e-15 * norm_c) break;  // damped system solved
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }

  // Report on the best iterate, with the residual recomputed from an exact
  // product rather than the incremental running sum.
  std::vector<double> hx = hvp_oracle(best_x);
  check_finite(hx, "H*x");
  double resid = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = hx[i] - b[i];
    resid += d * d;
  }
  report.residual = std::sqrt(resid) / norm_b;
  report.iterations = it;
  report.converged = report.residual <= cfg.cg_tol;
  return {std::move(best_x), report};
}

Tensor dense_hessian(const Objective& objective, const ParamVector& params, std::size_t cap) {
  const std::size_t p = objective.dim(params);
  if (p > cap) {
    throw ConfigError("dense_hessian: dimension " + std::to_string(p) + " exceeds cap " +
                      std::to_string(cap));
  }
  Tensor h = Tensor::zeros({p, p});
  std::vector<double> unit(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    unit[j] = 1.0;
    std::vector<double> col = objective.hvp(params, unit);
    unit[j] = 0.0;
    for (std::size_t i = 0; i < p; ++i) h.at(i, j) = col[i];
  }
  return h;
}

Tensor dense_hessian(const ad::LossFunction& loss, const ParamVector& params,
                     const ad::Batch& batch, std::span<const std::string> wrt, std::size_t cap) {
  const std::size_t p = params.total_length(wrt);
  if (p > cap) {
    throw ConfigError("dense_hessian: dimension " + std::to_string(p) + " exceeds cap " +
                      std::to_string(cap));
  }
  Tensor h = Tensor::zeros({p, p});
  std::vector<double> unit(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    unit[j] = 1.0;
    std::vector<double> col = ad::hvp(loss, params, batch, wrt, unit);
    unit[j] = 0.0;
    for (std::size_t i = 0; i < p; ++i) h.at(i, j) = col[i];
  }
  return h;
}

HvpOracle subsampled_hvp_oracle(const Objective& objective, const ParamVector& params,
                                const SolverConfig& cfg) {
  const int n = objective.data().size();
  if (n == 0) throw ConfigError("subsampled_hvp_oracle: empty dataset");
  if (cfg.hessian_subsample > n) {
    throw ConfigError("subsampled_hvp_oracle: subsample exceeds dataset size");
  }

  auto params_copy = std::make_shared<ParamVector>(params);
  std::shared_ptr<Objective> obj;
  if (cfg.hessian_subsample > 0 && cfg.hessian_subsample < n) {
    // Fixed subsample, chosen once per oracle.
    std::vector<int> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    Rng rng(cfg.subsample_seed);
    rng.shuffle(indices);
    indices.resize(static_cast<std::size_t>(cfg.hessian_subsample));
    std::sort(indices.begin(), indices.end());
    obj = std::make_shared<Objective>(objective.restricted_to(indices));
  } else {
    obj = std::make_shared<Objective>(objective);
  }
  return [obj, params_copy](std::span<const double> v) {
    return obj->hvp(*params_copy, v);
  };
}

}  // namespace msi
