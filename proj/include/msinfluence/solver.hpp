#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "msinfluence/objective.hpp"
#include "msinfluence/tensor.hpp"

namespace msi {

struct SolverConfig {
  double damping_lambda = 1e-2;  // diagonal damping on the squared system
  double cg_tol = 1e-6;          // relative residual threshold on Hx = b
  int cg_max_iters = 200;
  // Number of examples used when summing the Hessian (0 = all). The
  // subsample is drawn once per oracle, not per product.
  long hessian_subsample = 0;
  std::uint64_t subsample_seed = 17;
};

struct SolveReport {
  int iterations = 0;
  double residual = 0.0;  // |Hx - b| / |b| of the original system
  bool converged = false;
};

using HvpOracle = std::function<std::vector<double>(std::span<const double>)>;

// Inverse-Hessian-vector product via conjugate gradient on
//   (H^2 + lambda I) x = H b,
// the quadratic form 0.5 x'(H^2+lambda I)x - (Hb)'x. The squared system is
// positive definite whenever H is invertible, including indefinite H. H is
// never materialized: each CG iteration issues two oracle calls (H p and
// H(H p)), and H x is carried along incrementally so the original-system
// residual is available at no extra cost.
std::pair<std::vector<double>, SolveReport> solve_ihvp(const HvpOracle& hvp_oracle,
                                                       std::span<const double> b,
                                                       const SolverConfig& cfg);

// Hessian over the objective's wrt segments as a dense matrix, built
// column-wise from HVPs with unit vectors. Test-oracle territory; capped.
Tensor dense_hessian(const Objective& objective, const ParamVector& params,
                     std::size_t cap = 512);

// Spec-shaped overload over a raw loss + batch.
Tensor dense_hessian(const ad::LossFunction& loss, const ParamVector& params,
                     const ad::Batch& batch, std::span<const std::string> wrt,
                     std::size_t cap = 512);

// HVP oracle for the objective's Hessian summed over a fixed,
// seed-deterministic subsample (cfg.hessian_subsample examples, 0 = all),
// scaled as an average.
HvpOracle subsampled_hvp_oracle(const Objective& objective, const ParamVector& params,
                                const SolverConfig& cfg);

}  // namespace msi
