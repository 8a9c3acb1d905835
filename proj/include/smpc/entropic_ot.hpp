#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "smpc/lti_core.hpp"

namespace smpc {

/// Uniform-marginal entropic optimal transport between N sources and N targets.
///
/// Scalings are projective: (alpha, beta) and (c alpha, beta / c) give the same
/// coupling. They are carried as logarithms so that kernels with C/eps far
/// beyond the exp() range stay representable.

enum class Domain { log, linear };

/// K = exp(-C / eps). Only log K is kept unless the linear fast path is requested.
class GibbsKernel {
 public:
  GibbsKernel(const Matrix& cost, double epsilon, Domain domain = Domain::log);

  const Matrix& log_kernel() const { return log_k_; }
  /// Linear-domain entries; empty in log mode.
  const Matrix& kernel() const { return k_; }
  double epsilon() const { return epsilon_; }
  Domain domain() const { return domain_; }
  Eigen::Index size() const { return log_k_.rows(); }

 private:
  Matrix log_k_;
  Matrix k_;
  double epsilon_;
  Domain domain_;
};

GibbsKernel gibbs_kernel(const Matrix& cost, double epsilon, Domain domain = Domain::log);

/// log alpha and log beta. Representatives are normalized so that max(alpha) = 1.
struct ScalingState {
  Vector log_alpha;
  Vector log_beta;

  Vector alpha() const { return log_alpha.array().exp(); }
  Vector beta() const { return log_beta.array().exp(); }
};

/// One paired update: beta = (1/N) / (K^T alpha), alpha+ = (1/N) / (K beta).
/// Returns alpha+ in `log_alpha` and beta in `log_beta`.
ScalingState sinkhorn_step(const GibbsKernel& kernel, const Vector& log_alpha);

/// P_ij = alpha_i K_ij beta_j.
Matrix coupling_from_scalings(const GibbsKernel& kernel, const ScalingState& scalings);

/// ||P 1 - 1/N||_1 + ||P^T 1 - 1/N||_1
double marginal_violation(const Matrix& coupling);

struct SinkhornOptions {
  double tol = 1e-9;
  std::size_t max_iter = 1'000'000;
  /// Log domain only: when `plain_budget` sweeps do not converge, continue
  /// with damped Newton steps on the dual, then with epsilon scaling. The
  /// stopping test and the fixed point are the same.
  bool stall_fallback = true;
  std::size_t plain_budget = 1000;
};

struct SinkhornResult {
  ScalingState scalings;
  Matrix coupling;
  std::size_t iterations = 0;
  double violation = 0.0;
};

/// Iterates until the marginal violation drops below `options.tol`.
/// `iterations` counts every sweep, including any annealing stages.
/// Throws NonConvergence after `options.max_iter` sweeps.
SinkhornResult sinkhorn_solve(const GibbsKernel& kernel, const Vector& log_alpha0,
                              const SinkhornOptions& options = {});

/// Exactly `steps` paired updates from a warm start. The coupling is the one
/// formed from the last alpha and beta, so its rows sum to 1/N.
SinkhornResult sinkhorn_partial(const GibbsKernel& kernel, const Vector& log_alpha_in,
                                int steps);

/// Column i of the result is N * sum_j P_ij x_j, where x_j are the columns of `points`.
Matrix barycentric_projection(const Matrix& coupling, const Matrix& points);

/// H(P) = -sum P_ij (log P_ij - 1), with 0 log 0 = 0.
double entropy(const Matrix& coupling);

/// sum C_ij P_ij - eps H(P)
double entropic_objective(const Matrix& cost, const Matrix& coupling, double epsilon);

/// Optimal value of the entropic OT problem, evaluated at the Sinkhorn fixed point.
double entropic_cost(const Matrix& cost, double epsilon, const SinkhornOptions& options = {});

struct Assignment {
  std::vector<int> sigma;  // agent i -> target sigma[i]
  double cost = 0.0;
};

/// Minimum-cost permutation (Hungarian method). Among optimal permutations the
/// lexicographically smallest sigma is returned.
Assignment exact_assignment(const Matrix& cost);

/// P^sigma with entries 1/N on (i, sigma[i]).
Matrix permutation_coupling(const std::vector<int>& sigma);

}  // namespace smpc
