#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "smpc/entropic_ot.hpp"
#include "smpc/lti_core.hpp"
#include "smpc/mpc_law.hpp"

namespace smpc {

struct SimConfig {
  double epsilon = 0.7;
  double T_h = 1.0;  // continuous horizon
  int tau_h = 50;    // discrete horizon (steps)
  /// Sinkhorn iterations per time step; empty means "iterate to convergence".
  std::optional<int> sinkhorn_iterations;
  /// Integration step (continuous) or sampling period (discrete).
  double h = 0.01;
  std::size_t n_steps = 1000;
  /// Initial Sinkhorn scaling alpha_0 (positive); empty means all ones.
  Vector alpha0;
  double sinkhorn_tol = 1e-9;
  std::size_t sinkhorn_max_iter = 1'000'000;
  std::uint64_t seed = 0;
  /// Coupling snapshots are kept every `stride` steps (0 disables them).
  std::size_t stride = 1;
};

/// Closed-loop run. `states` has n_steps + 1 entries (n x N), `inputs` has
/// n_steps entries (m x N), both indexed by step; agent i is column i.
struct Trajectory {
  Mode mode = Mode::discrete;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Matrix> states;
  std::vector<Matrix> inputs;
  std::vector<std::size_t> coupling_steps;
  std::vector<Matrix> couplings;
  std::vector<Vector> log_alpha;  // warm-start scaling carried out of each step
  std::vector<std::size_t> sinkhorn_iterations;
  std::vector<double> max_tmp_norm;  // max_i ||x_i^tmp|| per step
  std::vector<double> lyapunov;      // continuous runs: E(x[k]) per state sample
};

/// Gramian-weighted costs C_ij = ||x_i - x_j^d||^2_{G_i}.
Matrix transport_cost_matrix(std::span<const AgentGains> gains, const Matrix& states,
                             const Matrix& targets);

/// Continuous closed loop  x_i' = A_cl,i (x_i - N sum_j P*_ij(x) x_j^d),
/// integrated with classical RK4; P* is re-solved (warm-started) at every stage.
Trajectory simulate_continuous(std::span<const ContinuousAgent> agents, const TargetSet& targets,
                               const Matrix& initial, const SimConfig& cfg);

/// Discrete Sinkhorn MPC with `cfg.sinkhorn_iterations` iterations per step,
/// warm-started from the previous step's alpha.
Trajectory simulate_sinkhorn_mpc(std::span<const DiscreteAgent> agents, const TargetSet& targets,
                                 const Matrix& initial, const SimConfig& cfg);

/// Discrete MPC toward the exact (eps = 0) assignment recomputed every step.
Trajectory simulate_unregularized_mpc(std::span<const DiscreteAgent> agents,
                                      const TargetSet& targets, const Matrix& initial,
                                      const SimConfig& cfg);

struct LyapunovReport {
  std::vector<double> values;
  double max_increase = 0.0;           // max_k E[k+1] - E[k]
  double max_relative_increase = 0.0;  // max_k (E[k+1] - E[k]) / (1 + |E[k]|)
};

/// Entropic OT cost of every state sample, each solved from a cold start.
LyapunovReport lyapunov_series(const Trajectory& trajectory, const TargetSet& targets,
                               std::span<const AgentGains> gains, double epsilon,
                               const SinkhornOptions& options = {});

/// Per agent: ||B^T G (x_i - x_i^tmp)|| and ||B^T e^{-A^T T_h} G (x_i - x_i^tmp)||
/// at the entropic optimum P*(x).
std::vector<std::pair<double, double>> stationarity_residual(
    std::span<const ContinuousAgent> agents, std::span<const AgentGains> gains,
    const TargetSet& targets, const Matrix& states, double epsilon,
    const SinkhornOptions& options = {});

struct UltimateBoundCert {
  std::vector<double> nu;
  std::vector<double> rho;
  std::vector<double> kappa;
  std::vector<double> bound;
  double rbar = 0.0;
  double delta = 0.0;
};

/// bound_i = delta + kappa_i rbar ||I - A_cl,i||_2 / (1 - (rho_i + nu_i))
UltimateBoundCert ultimate_bound_certificate(std::span<const AgentGains> gains,
                                             const TargetSet& targets,
                                             std::span<const double> nu, double delta);

/// nu_i = (1 - rho_i) / 2
std::vector<double> default_nu(std::span<const AgentGains> gains);

/// First step tau with ||x_i[k]|| < bound_i for all i and all k >= tau;
/// empty when even the last sample violates the bound.
std::optional<std::size_t> verify_ultimate_bound(const UltimateBoundCert& cert,
                                                 const Trajectory& trajectory);

/// sum_{i,k} dt ||u_i[k]||^2
double accumulated_cost(const Trajectory& trajectory, double dt);

}  // namespace smpc
