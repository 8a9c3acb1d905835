#pragma once

#include "smpc/lti_core.hpp"

namespace smpc {

/// Closed-form minimum-energy MPC feedback for one agent:
///   u = -feedback_gain (x - x_tmp) + ubar(P)
/// where feedback_gain is B^T G_weight (continuous) or
/// B^T (A^T)^{tau-1} G^-1 A^tau (discrete).
struct MpcLaw {
  Mode mode;
  Matrix A;
  Matrix B;
  AgentGains gains;
  Matrix feedback_gain;
};

MpcLaw make_mpc_law(const ContinuousAgent& agent, double T_h);
MpcLaw make_mpc_law(const DiscreteAgent& agent, int tau_h);

/// ||x - y||^2 weighted by gains.G_weight.
double transport_cost(const AgentGains& gains, const Vector& x, const Vector& y);

/// N sum_j P_ij ubar_ij for one agent, given its coupling row and its m x N table.
Vector ubar_of_coupling(const Vector& coupling_row, const Matrix& ubar_table);

Vector mpc_input(const MpcLaw& law, const Vector& x, const Vector& x_tmp, const Vector& ubar_P);

struct MinEnergySolution {
  double cost = 0.0;
  Matrix inputs;  // m x steps, column k is u[k]
};

/// Reference solve of  min sum_k ||u[k] - ubar||^2  s.t.  x[0] = x0, x[tau] = xf
/// by a least-norm solve on the stacked input-to-endpoint map. Independent of
/// the Gramian formulas; meant for verification.
MinEnergySolution min_energy_oracle(const DiscreteAgent& agent, int tau_h, const Vector& x0,
                                    const Vector& xf, const Vector& ubar);

/// Same with ubar = equilibrium_input(agent, xf).
MinEnergySolution min_energy_oracle(const DiscreteAgent& agent, int tau_h, const Vector& x0,
                                    const Vector& xf);

/// Continuous horizon T_h approximated by ZOH with `steps` sub-intervals;
/// the cost is the integral of the piecewise-constant input, h sum ||du||^2.
MinEnergySolution min_energy_oracle(const ContinuousAgent& agent, double T_h, const Vector& x0,
                                    const Vector& xf, const Vector& ubar, int steps = 2000);

}  // namespace smpc
