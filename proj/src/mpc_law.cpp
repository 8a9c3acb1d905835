#include "smpc/mpc_law.hpp"

#include <limits>

#include <Eigen/QR>

#include "smpc/errors.hpp"

namespace smpc {

MpcLaw make_mpc_law(const ContinuousAgent& agent, double T_h) {
  AgentGains gains = continuous_gramian(agent, T_h);
  Matrix gain = gains.feedback;
  return MpcLaw{Mode::continuous, agent.A, agent.B, std::move(gains), std::move(gain)};
}

MpcLaw make_mpc_law(const DiscreteAgent& agent, int tau_h) {
  AgentGains gains = reachability_gramian(agent, tau_h);
  Matrix gain = gains.feedback;
  return MpcLaw{Mode::discrete, agent.A, agent.B, std::move(gains), std::move(gain)};
}

double transport_cost(const AgentGains& gains, const Vector& x, const Vector& y) {
  const Vector d = x - y;
  return d.dot(gains.G_weight * d);
}

Vector ubar_of_coupling(const Vector& coupling_row, const Matrix& ubar_table) {
  if (coupling_row.size() != ubar_table.cols()) {
    throw InvalidArgument("coupling row and equilibrium table sizes differ");
  }
  return static_cast<double>(coupling_row.size()) * (ubar_table * coupling_row);
}

Vector mpc_input(const MpcLaw& law, const Vector& x, const Vector& x_tmp, const Vector& ubar_P) {
  return ubar_P - law.feedback_gain * (x - x_tmp);
}

namespace {

// Least-norm du with  A^tau dx0 + sum_k A^{tau-1-k} B du[k] = 0.
Matrix least_norm_steering(const Matrix& A, const Matrix& B, int steps, const Vector& dx0) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  Matrix stacked(n, m * steps);
  Matrix power_B = B;  // A^{tau-1-k} B, filled from the last block backwards
  for (int k = steps - 1; k >= 0; --k) {
    stacked.middleCols(k * m, m) = power_B;
    power_B = A * power_B;
  }
  Matrix A_tau = Matrix::Identity(n, n);
  for (int k = 0; k < steps; ++k) A_tau = A * A_tau;

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(stacked);
  if (cod.rank() < n) {
    throw NearSingularGramian("endpoint map is rank deficient; horizon below reachability index",
                              std::numeric_limits<double>::infinity());
  }
  const Vector du = cod.solve(-A_tau * dx0);
  return du.reshaped(m, steps);
}

}  // namespace

MinEnergySolution min_energy_oracle(const DiscreteAgent& agent, int tau_h, const Vector& x0,
                                    const Vector& xf, const Vector& ubar) {
  if (tau_h < 1) throw InvalidArgument("tau_h must be >= 1");
  if (x0.size() != agent.n() || xf.size() != agent.n() || ubar.size() != agent.m()) {
    throw InvalidArgument("oracle argument dimensions do not match the agent");
  }
  const Matrix du = least_norm_steering(agent.A, agent.B, tau_h, x0 - xf);
  MinEnergySolution sol;
  sol.cost = du.squaredNorm();
  sol.inputs = du.colwise() + ubar;
  return sol;
}

MinEnergySolution min_energy_oracle(const DiscreteAgent& agent, int tau_h, const Vector& x0,
                                    const Vector& xf) {
  return min_energy_oracle(agent, tau_h, x0, xf, equilibrium_input(agent, xf));
}

MinEnergySolution min_energy_oracle(const ContinuousAgent& agent, double T_h, const Vector& x0,
                                    const Vector& xf, const Vector& ubar, int steps) {
  if (!(T_h > 0.0) || steps < 1) throw InvalidArgument("horizon and step count must be > 0");
  const double h = T_h / steps;
  const DiscreteAgent sampled = zoh_discretize(agent, h);
  const Matrix du = least_norm_steering(sampled.A, sampled.B, steps, x0 - xf);
  MinEnergySolution sol;
  sol.cost = h * du.squaredNorm();
  sol.inputs = du.colwise() + ubar;
  return sol;
}

}  // namespace smpc
