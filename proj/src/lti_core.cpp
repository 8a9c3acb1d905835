#include "smpc/lti_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "smpc/errors.hpp"

namespace smpc {

namespace {

void require_finite(const Matrix& M, const char* name) {
  if (!M.allFinite()) {
    throw InvalidArgument(std::string(name) + " has non-finite entries");
  }
}

void require_pair(const Matrix& A, const Matrix& B) {
  if (A.rows() < 1 || A.rows() != A.cols()) {
    throw InvalidArgument("A must be square with n >= 1");
  }
  if (B.rows() != A.rows() || B.cols() < 1) {
    throw InvalidArgument("B must be n x m with m >= 1");
  }
  require_finite(A, "A");
  require_finite(B, "B");
}

Matrix symmetrized(const Matrix& M) { return 0.5 * (M + M.transpose()); }

// Returns lambda_max / lambda_min, +inf when W is not positive definite.
double spd_condition(const Matrix& W) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(W, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

void require_invertible_gramian(double cond, const char* name) {
  if (!(cond <= kMaxGramianCondition)) {
    throw NearSingularGramian(std::string(name) + " is near-singular (condition " +
                                  std::to_string(cond) + ")",
                              cond);
  }
}

Matrix spd_inverse(const Matrix& W) {
  Eigen::LLT<Matrix> llt(W);
  if (llt.info() != Eigen::Success) {
    throw NearSingularGramian("Gramian Cholesky factorization failed",
                              std::numeric_limits<double>::infinity());
  }
  return symmetrized(llt.solve(Matrix::Identity(W.rows(), W.cols())));
}

Vector solve_equilibrium(const Matrix& B, const Vector& rhs, const Vector& target) {
  Vector u = B.completeOrthogonalDecomposition().solve(rhs);
  const double residual = (B * u - rhs).norm();
  if (!(residual <= 1e-9 * (1.0 + target.norm()))) {
    throw InfeasibleTarget("target admits no equilibrium input (residual " +
                               std::to_string(residual) + ")",
                           residual);
  }
  return u;
}

void check_points(const Matrix& points, Eigen::Index n) {
  if (points.rows() != n) {
    throw InvalidArgument("target dimension does not match agent state dimension");
  }
  if (points.cols() < 1) throw InvalidArgument("target set is empty");
  require_finite(points, "targets");
}

template <class Agent>
TargetSet build_targets(std::span<const Agent> agents, const Matrix& points) {
  if (static_cast<Eigen::Index>(agents.size()) != points.cols()) {
    throw InvalidArgument("number of agents must equal number of targets");
  }
  TargetSet set;
  set.points = points;
  set.ubar.reserve(agents.size());
  for (const Agent& agent : agents) {
    check_points(points, agent.n());
    Matrix table(agent.m(), points.cols());
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      table.col(j) = equilibrium_input(agent, points.col(j));
    }
    set.ubar.push_back(std::move(table));
  }
  set.rbar = points.colwise().norm().maxCoeff();
  return set;
}

template <class Agent>
TargetSet validate_targets(std::span<const Agent> agents, const Matrix& points,
                           std::vector<Matrix> ubar, bool discrete) {
  if (static_cast<Eigen::Index>(agents.size()) != points.cols() ||
      ubar.size() != agents.size()) {
    throw InvalidArgument("agents, targets and equilibrium table sizes differ");
  }
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Agent& agent = agents[i];
    check_points(points, agent.n());
    if (ubar[i].rows() != agent.m() || ubar[i].cols() != points.cols()) {
      throw InvalidArgument("equilibrium table has wrong shape");
    }
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      const Vector x = points.col(j);
      Vector r = agent.A * x + agent.B * ubar[i].col(j);
      if (discrete) r -= x;
      if (!(r.norm() <= 1e-9 * (1.0 + x.norm()))) {
        throw InfeasibleTarget("supplied equilibrium input violates its equation", r.norm());
      }
    }
  }
  TargetSet set;
  set.points = points;
  set.ubar = std::move(ubar);
  set.rbar = points.colwise().norm().maxCoeff();
  return set;
}

}  // namespace

const char* to_string(Mode mode) {
  return mode == Mode::continuous ? "continuous" : "discrete";
}

ContinuousAgent::ContinuousAgent(Matrix a, Matrix b) : A(std::move(a)), B(std::move(b)) {
  require_pair(A, B);
}

DiscreteAgent::DiscreteAgent(Matrix a, Matrix b, double period)
    : A(std::move(a)), B(std::move(b)), h(period) {
  require_pair(A, B);
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("sampling period must be > 0");
}

Matrix matrix_exponential(const Matrix& M) {
  if (M.rows() != M.cols()) throw InvalidArgument("matrix_exponential needs a square matrix");
  require_finite(M, "matrix_exponential argument");
  if (M.size() == 0) return M;
  return M.exp();
}

DiscreteAgent zoh_discretize(const ContinuousAgent& agent, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("sampling period must be > 0");
  const Eigen::Index n = agent.n();
  const Eigen::Index m = agent.m();
  // exp([A B; 0 0] h) = [A_d B_d; 0 I]
  Matrix M = Matrix::Zero(n + m, n + m);
  M.topLeftCorner(n, n) = agent.A * h;
  M.topRightCorner(n, m) = agent.B * h;
  const Matrix phi = matrix_exponential(M);
  return DiscreteAgent(phi.topLeftCorner(n, n), phi.topRightCorner(n, m), h);
}

AgentGains continuous_gramian(const ContinuousAgent& agent, double T_h) {
  if (!(T_h > 0.0) || !std::isfinite(T_h)) throw InvalidArgument("horizon must be > 0");
  const Eigen::Index n = agent.n();
  const Matrix& A = agent.A;
  const Matrix& B = agent.B;

  // Van Loan: exp([A BB^T; 0 -A^T] T) = [* E12; 0 E22] with E22 = e^{-A^T T}
  // and E22^T E12 = int_0^T e^{-At} B B^T e^{-A^T t} dt.
  Matrix M = Matrix::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = A * T_h;
  M.topRightCorner(n, n) = B * B.transpose() * T_h;
  M.bottomRightCorner(n, n) = -A.transpose() * T_h;
  const Matrix E = matrix_exponential(M);

  AgentGains g;
  g.mode = Mode::continuous;
  g.T_h = T_h;
  g.exp_neg_AT = E.bottomRightCorner(n, n);
  g.W = symmetrized(g.exp_neg_AT.transpose() * E.topRightCorner(n, n));
  g.condition = spd_condition(g.W);
  require_invertible_gramian(g.condition, "controllability Gramian");
  g.G_weight = spd_inverse(g.W);
  g.feedback = B.transpose() * g.G_weight;
  g.A_cl = A - B * g.feedback;

  Eigen::EigenSolver<Matrix> eig(g.A_cl, false);
  const double max_real = eig.eigenvalues().real().maxCoeff();
  if (!(max_real < 0.0)) {
    throw NumericError("closed-loop matrix is not Hurwitz (max real part " +
                       std::to_string(max_real) + ")");
  }
  g.rho = spectral_radius(g.A_cl);
  return g;
}

AgentGains reachability_gramian(const DiscreteAgent& agent, int tau_h) {
  if (tau_h < 1) throw InvalidArgument("tau_h must be >= 1");
  const Eigen::Index n = agent.n();
  const Matrix& A = agent.A;
  const Matrix& B = agent.B;

  // power_B = A^k B; after the loop it holds A^{tau-1} B.
  Matrix G = B * B.transpose();
  Matrix power_B = B;
  for (int k = 1; k < tau_h; ++k) {
    power_B = A * power_B;
    G.noalias() += power_B * power_B.transpose();
  }
  Matrix A_tau = Matrix::Identity(n, n);
  for (int k = 0; k < tau_h; ++k) A_tau = A * A_tau;

  AgentGains g;
  g.mode = Mode::discrete;
  g.tau_h = tau_h;
  g.W = symmetrized(G);
  g.condition = spd_condition(g.W);
  require_invertible_gramian(g.condition, "reachability Gramian");
  const Matrix G_inv = spd_inverse(g.W);
  g.G_weight = symmetrized(A_tau.transpose() * G_inv * A_tau);
  g.feedback = power_B.transpose() * G_inv * A_tau;
  g.A_cl = A - B * g.feedback;
  g.rho = spectral_radius(g.A_cl);
  if (!(g.rho < 1.0)) {
    throw NumericError("closed-loop matrix is not Schur stable (rho " + std::to_string(g.rho) +
                       ")");
  }
  return g;
}

Vector equilibrium_input(const ContinuousAgent& agent, const Vector& target) {
  if (target.size() != agent.n()) throw InvalidArgument("target dimension mismatch");
  require_finite(target, "target");
  return solve_equilibrium(agent.B, -agent.A * target, target);
}

Vector equilibrium_input(const DiscreteAgent& agent, const Vector& target) {
  if (target.size() != agent.n()) throw InvalidArgument("target dimension mismatch");
  require_finite(target, "target");
  return solve_equilibrium(agent.B, target - agent.A * target, target);
}

double spectral_radius(const Matrix& M) {
  if (M.rows() != M.cols()) throw InvalidArgument("spectral_radius needs a square matrix");
  require_finite(M, "spectral_radius argument");
  if (M.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> eig(M, false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

double spectral_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

double kappa_bound(const Matrix& A_cl, double nu) {
  if (!(nu > 0.0)) throw InvalidArgument("nu must be > 0");
  const double rate = spectral_radius(A_cl) + nu;
  if (!(rate < 1.0)) throw InvalidArgument("rho + nu must be < 1");

  // Once ||(A/r)^K|| < 1, submultiplicativity bounds every later power by the
  // running maximum over k < K, so the scan can stop there.
  const Matrix scaled = A_cl / rate;
  Matrix power = Matrix::Identity(A_cl.rows(), A_cl.cols());
  double kappa = 1.0;
  constexpr int kMaxPowers = 1'000'000;
  for (int k = 1; k <= kMaxPowers; ++k) {
    power = power * scaled;
    const double ratio = spectral_norm(power);
    kappa = std::max(kappa, ratio);
    if (ratio < 1.0) return kappa;
  }
  throw NumericError("kappa scan did not terminate; rho + nu too close to rho");
}

AgentGains with_kappa(AgentGains gains, std::span<const double> nus) {
  for (double nu : nus) gains.kappa_table[nu] = kappa_bound(gains.A_cl, nu);
  return gains;
}

TargetSet make_target_set(std::span<const ContinuousAgent> agents, const Matrix& points) {
  return build_targets(agents, points);
}

TargetSet make_target_set(std::span<const DiscreteAgent> agents, const Matrix& points) {
  return build_targets(agents, points);
}

TargetSet make_target_set(std::span<const ContinuousAgent> agents, const Matrix& points,
                          std::vector<Matrix> ubar) {
  return validate_targets(agents, points, std::move(ubar), false);
}

TargetSet make_target_set(std::span<const DiscreteAgent> agents, const Matrix& points,
                          std::vector<Matrix> ubar) {
  return validate_targets(agents, points, std::move(ubar), true);
}

}  // namespace smpc
