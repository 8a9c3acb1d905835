#pragma once

#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace smpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Mode { continuous, discrete };

const char* to_string(Mode mode);

/// x' = A x + B u
struct ContinuousAgent {
  Matrix A;
  Matrix B;

  ContinuousAgent(Matrix A, Matrix B);
  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
};

/// x[k+1] = A x[k] + B u[k], sampled every h time units.
struct DiscreteAgent {
  Matrix A;
  Matrix B;
  double h;

  DiscreteAgent(Matrix A, Matrix B, double h);
  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
};

/// Horizon-dependent quantities of one agent's minimum-energy MPC law.
///
/// Continuous mode: `W` is the controllability-type Gramian over [0, T_h] of
/// the backward flow, `G_weight = W^-1`, `feedback = B^T G_weight` and
/// `exp_neg_AT = e^{-A^T T_h}`.
///
/// Discrete mode: `W` is the tau_h-step reachability Gramian `G`,
/// `G_weight = (A^tau)^T G^-1 A^tau` (only PSD when A is singular),
/// `feedback = B^T (A^T)^{tau-1} G^-1 A^tau`; `exp_neg_AT` is empty.
///
/// In both modes `A_cl = A - B * feedback`.
struct AgentGains {
  Mode mode = Mode::continuous;
  double T_h = 0.0;  // continuous horizon
  int tau_h = 0;     // discrete horizon
  Matrix W;
  Matrix G_weight;
  Matrix A_cl;
  Matrix feedback;
  Matrix exp_neg_AT;
  double rho = 0.0;
  double condition = 0.0;  // condition number of W
  std::map<double, double> kappa_table;
};

/// e^M by scaling and squaring with a Pade core.
Matrix matrix_exponential(const Matrix& M);

/// Zero-order hold: A_d = e^{Ah}, B_d = (int_0^h e^{As} ds) B.
DiscreteAgent zoh_discretize(const ContinuousAgent& agent, double h);

/// Gramians whose condition number exceeds this are treated as singular.
inline constexpr double kMaxGramianCondition = 1e12;

AgentGains continuous_gramian(const ContinuousAgent& agent, double T_h);
AgentGains reachability_gramian(const DiscreteAgent& agent, int tau_h);

/// Minimum-norm u with A x + B u = 0 (continuous) or A x + B u = x (discrete).
Vector equilibrium_input(const ContinuousAgent& agent, const Vector& target);
Vector equilibrium_input(const DiscreteAgent& agent, const Vector& target);

double spectral_radius(const Matrix& M);

/// Largest singular value.
double spectral_norm(const Matrix& M);

/// Smallest kappa with ||A_cl^k||_2 <= kappa (rho + nu)^k for every k >= 0.
double kappa_bound(const Matrix& A_cl, double nu);

/// Copy of `gains` with kappa_bound evaluated for each nu.
AgentGains with_kappa(AgentGains gains, std::span<const double> nus);

/// Targets x_j^d (columns of `points`) with the equilibrium-input table.
struct TargetSet {
  Matrix points;              // n x N
  std::vector<Matrix> ubar;   // ubar[i] is m x N, column j is u_ij
  double rbar = 0.0;          // max_j ||x_j^d||

  Eigen::Index size() const { return points.cols(); }
  Eigen::Index dim() const { return points.rows(); }
};

/// Fills the table with minimum-norm equilibrium inputs; throws InfeasibleTarget.
TargetSet make_target_set(std::span<const ContinuousAgent> agents, const Matrix& points);
TargetSet make_target_set(std::span<const DiscreteAgent> agents, const Matrix& points);

/// Validates a caller-supplied table against each agent's equilibrium equation.
TargetSet make_target_set(std::span<const ContinuousAgent> agents, const Matrix& points,
                          std::vector<Matrix> ubar);
TargetSet make_target_set(std::span<const DiscreteAgent> agents, const Matrix& points,
                          std::vector<Matrix> ubar);

}  // namespace smpc
