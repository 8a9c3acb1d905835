#include "smpc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "smpc/errors.hpp"

namespace smpc {

namespace {

template <class Agent>
void validate_problem(std::span<const Agent> agents, const TargetSet& targets,
                      const Matrix& initial, const SimConfig& cfg) {
  if (agents.empty()) throw InvalidArgument("no agents");
  const auto N = static_cast<Eigen::Index>(agents.size());
  const Eigen::Index n = agents.front().n();
  const Eigen::Index m = agents.front().m();
  for (const Agent& a : agents) {
    if (a.n() != n || a.m() != m) {
      throw InvalidArgument("all agents must share state and input dimensions");
    }
  }
  if (targets.size() != N || targets.dim() != n ||
      static_cast<Eigen::Index>(targets.ubar.size()) != N) {
    throw InvalidArgument("target set does not match the agents");
  }
  if (initial.rows() != n || initial.cols() != N || !initial.allFinite()) {
    throw InvalidArgument("initial states must be a finite n x N matrix");
  }
  if (!(cfg.epsilon > 0.0)) throw InvalidArgument("epsilon must be > 0");
  if (!(cfg.h > 0.0)) throw InvalidArgument("step size must be > 0");
  if (cfg.sinkhorn_iterations && *cfg.sinkhorn_iterations < 1) {
    throw InvalidArgument("Sinkhorn iterations per step must be >= 1");
  }
  if (cfg.alpha0.size() != 0 &&
      (cfg.alpha0.size() != N || !(cfg.alpha0.array() > 0.0).all() || !cfg.alpha0.allFinite())) {
    throw InvalidArgument("alpha0 must hold N positive finite entries");
  }
}

Vector initial_log_alpha(const SimConfig& cfg, Eigen::Index N) {
  if (cfg.alpha0.size() == 0) return Vector::Zero(N);
  return cfg.alpha0.array().log();
}

SinkhornOptions sinkhorn_options(const SimConfig& cfg) {
  return SinkhornOptions{cfg.sinkhorn_tol, cfg.sinkhorn_max_iter};
}

// States beyond this radius indicate a bug: the closed loop is ultimately bounded.
class DivergenceGuard {
 public:
  DivergenceGuard(const TargetSet& targets, const Matrix& initial)
      : radius_(1e3 * (targets.rbar + initial.colwise().norm().maxCoeff())) {}

  void check(const Matrix& states, std::size_t step) const {
    if (!states.allFinite()) throw Divergence("non-finite state", step);
    if (states.colwise().norm().maxCoeff() > radius_) {
      throw Divergence("state left the divergence guard ball", step);
    }
  }

 private:
  double radius_;
};

Matrix ubar_matrix(const TargetSet& targets, const Matrix& coupling) {
  const Eigen::Index N = targets.size();
  Matrix u(targets.ubar.front().rows(), N);
  for (Eigen::Index i = 0; i < N; ++i) {
    u.col(i) = ubar_of_coupling(coupling.row(i).transpose(), targets.ubar[i]);
  }
  return u;
}

Trajectory start_trajectory(Mode mode, double dt, const Matrix& initial, const SimConfig& cfg) {
  Trajectory t;
  t.mode = mode;
  t.dt = dt;
  t.states.reserve(cfg.n_steps + 1);
  t.inputs.reserve(cfg.n_steps);
  t.times.reserve(cfg.n_steps + 1);
  t.states.push_back(initial);
  t.times.push_back(0.0);
  return t;
}

void record_step(Trajectory& t, const SimConfig& cfg, std::size_t k, const Matrix& coupling,
                 const Matrix& tmp_targets, Matrix inputs, const Vector& log_alpha,
                 std::size_t iterations) {
  t.inputs.push_back(std::move(inputs));
  t.max_tmp_norm.push_back(tmp_targets.colwise().norm().maxCoeff());
  t.sinkhorn_iterations.push_back(iterations);
  t.log_alpha.push_back(log_alpha);
  if (cfg.stride > 0 && k % cfg.stride == 0) {
    t.coupling_steps.push_back(k);
    t.couplings.push_back(coupling);
  }
}

[[noreturn]] void rethrow_with_step(const NonConvergence& e, std::size_t step) {
  throw NonConvergence(std::string(e.what()) + " at step " + std::to_string(step), e.violation(),
                       e.iterations());
}

}  // namespace

Matrix transport_cost_matrix(std::span<const AgentGains> gains, const Matrix& states,
                             const Matrix& targets) {
  const Eigen::Index N = states.cols();
  if (static_cast<Eigen::Index>(gains.size()) != N || targets.rows() != states.rows()) {
    throw InvalidArgument("cost matrix inputs have inconsistent sizes");
  }
  Matrix cost(N, targets.cols());
  for (Eigen::Index i = 0; i < N; ++i) {
    const Matrix diff = (-targets).colwise() + states.col(i);
    cost.row(i) = diff.cwiseProduct(gains[i].G_weight * diff).colwise().sum();
  }
  // Rounding can leave tiny negatives where x_i == x_j^d.
  return cost.cwiseMax(0.0);
}

Trajectory simulate_continuous(std::span<const ContinuousAgent> agents, const TargetSet& targets,
                               const Matrix& initial, const SimConfig& cfg) {
  validate_problem(agents, targets, initial, cfg);
  std::vector<AgentGains> gains;
  gains.reserve(agents.size());
  for (const ContinuousAgent& a : agents) gains.push_back(continuous_gramian(a, cfg.T_h));

  const Eigen::Index N = targets.size();
  const Matrix& xd = targets.points;
  const SinkhornOptions options = sinkhorn_options(cfg);
  const DivergenceGuard guard(targets, initial);
  const double h = cfg.h;
  Vector log_alpha = initial_log_alpha(cfg, N);

  struct Stage {
    Matrix cost;
    SinkhornResult ot;
  };
  std::size_t step = 0;
  auto solve = [&](const Matrix& x) {
    Stage s;
    s.cost = transport_cost_matrix(gains, x, xd);
    try {
      s.ot = sinkhorn_solve(GibbsKernel(s.cost, cfg.epsilon), log_alpha, options);
    } catch (const NonConvergence& e) {
      rethrow_with_step(e, step);
    }
    log_alpha = s.ot.scalings.log_alpha;
    return s;
  };
  auto field = [&](const Matrix& x, const Matrix& coupling) {
    const Matrix tmp = barycentric_projection(coupling, xd);
    Matrix dx(x.rows(), N);
    for (Eigen::Index i = 0; i < N; ++i) dx.col(i) = gains[i].A_cl * (x.col(i) - tmp.col(i));
    return dx;
  };

  Trajectory traj = start_trajectory(Mode::continuous, h, initial, cfg);
  traj.lyapunov.reserve(cfg.n_steps + 1);
  for (step = 0; step < cfg.n_steps; ++step) {
    const Matrix x = traj.states.back();
    const Stage s1 = solve(x);
    traj.lyapunov.push_back(entropic_objective(s1.cost, s1.ot.coupling, cfg.epsilon));

    const Matrix tmp = barycentric_projection(s1.ot.coupling, xd);
    const Matrix ubar = ubar_matrix(targets, s1.ot.coupling);
    Matrix u(ubar.rows(), N);
    for (Eigen::Index i = 0; i < N; ++i) {
      u.col(i) = ubar.col(i) - gains[i].feedback * (x.col(i) - tmp.col(i));
    }
    std::size_t iterations = s1.ot.iterations;

    const Matrix k1 = field(x, s1.ot.coupling);
    const Stage s2 = solve(x + 0.5 * h * k1);
    const Matrix k2 = field(x + 0.5 * h * k1, s2.ot.coupling);
    const Stage s3 = solve(x + 0.5 * h * k2);
    const Matrix k3 = field(x + 0.5 * h * k2, s3.ot.coupling);
    const Stage s4 = solve(x + h * k3);
    const Matrix k4 = field(x + h * k3, s4.ot.coupling);
    iterations += s2.ot.iterations + s3.ot.iterations + s4.ot.iterations;

    record_step(traj, cfg, step, s1.ot.coupling, tmp, std::move(u), log_alpha, iterations);
    Matrix next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    guard.check(next, step + 1);
    traj.states.push_back(std::move(next));
    traj.times.push_back(static_cast<double>(step + 1) * h);
  }
  const Stage last = solve(traj.states.back());
  traj.lyapunov.push_back(entropic_objective(last.cost, last.ot.coupling, cfg.epsilon));
  return traj;
}

namespace {

// Shared discrete loop; `couple` maps (step, cost) to the step's coupling.
template <class Couple>
Trajectory run_discrete(std::span<const DiscreteAgent> agents, const TargetSet& targets,
                        const Matrix& initial, const SimConfig& cfg, Couple&& couple) {
  std::vector<AgentGains> gains;
  gains.reserve(agents.size());
  for (const DiscreteAgent& a : agents) gains.push_back(reachability_gramian(a, cfg.tau_h));

  const Eigen::Index N = targets.size();
  const Matrix& xd = targets.points;
  const DivergenceGuard guard(targets, initial);
  const double dt = agents.front().h;

  Trajectory traj = start_trajectory(Mode::discrete, dt, initial, cfg);
  for (std::size_t step = 0; step < cfg.n_steps; ++step) {
    const Matrix& x = traj.states.back();
    const Matrix cost = transport_cost_matrix(gains, x, xd);
    const auto [coupling, log_alpha, iterations] = couple(step, cost);

    const Matrix tmp = barycentric_projection(coupling, xd);
    const Matrix ubar = ubar_matrix(targets, coupling);
    Matrix u(ubar.rows(), N);
    Matrix next(x.rows(), N);
    for (Eigen::Index i = 0; i < N; ++i) {
      u.col(i) = ubar.col(i) - gains[i].feedback * (x.col(i) - tmp.col(i));
      next.col(i) = agents[i].A * x.col(i) + agents[i].B * u.col(i);
    }
    record_step(traj, cfg, step, coupling, tmp, std::move(u), log_alpha, iterations);
    guard.check(next, step + 1);
    traj.states.push_back(std::move(next));
    traj.times.push_back(static_cast<double>(step + 1) * dt);
  }
  return traj;
}

struct StepCoupling {
  Matrix coupling;
  Vector log_alpha;
  std::size_t iterations;
};

}  // namespace

Trajectory simulate_sinkhorn_mpc(std::span<const DiscreteAgent> agents, const TargetSet& targets,
                                 const Matrix& initial, const SimConfig& cfg) {
  validate_problem(agents, targets, initial, cfg);
  const SinkhornOptions options = sinkhorn_options(cfg);
  Vector log_alpha = initial_log_alpha(cfg, targets.size());
  return run_discrete(agents, targets, initial, cfg,
                      [&](std::size_t step, const Matrix& cost) -> StepCoupling {
                        const GibbsKernel kernel(cost, cfg.epsilon);
                        SinkhornResult r;
                        if (cfg.sinkhorn_iterations) {
                          r = sinkhorn_partial(kernel, log_alpha, *cfg.sinkhorn_iterations);
                        } else {
                          try {
                            r = sinkhorn_solve(kernel, log_alpha, options);
                          } catch (const NonConvergence& e) {
                            rethrow_with_step(e, step);
                          }
                        }
                        // alpha[k+1, 1] = alpha[k, S+1]
                        log_alpha = r.scalings.log_alpha;
                        return {std::move(r.coupling), log_alpha, r.iterations};
                      });
}

Trajectory simulate_unregularized_mpc(std::span<const DiscreteAgent> agents,
                                      const TargetSet& targets, const Matrix& initial,
                                      const SimConfig& cfg) {
  validate_problem(agents, targets, initial, cfg);
  const Vector no_scaling;
  return run_discrete(agents, targets, initial, cfg,
                      [&](std::size_t, const Matrix& cost) -> StepCoupling {
                        const Assignment a = exact_assignment(cost);
                        return {permutation_coupling(a.sigma), no_scaling, 0};
                      });
}

LyapunovReport lyapunov_series(const Trajectory& trajectory, const TargetSet& targets,
                               std::span<const AgentGains> gains, double epsilon,
                               const SinkhornOptions& options) {
  LyapunovReport report;
  report.values.reserve(trajectory.states.size());
  for (const Matrix& x : trajectory.states) {
    const Matrix cost = transport_cost_matrix(gains, x, targets.points);
    const SinkhornResult r =
        sinkhorn_solve(GibbsKernel(cost, epsilon), Vector::Zero(targets.size()), options);
    report.values.push_back(entropic_objective(cost, r.coupling, epsilon));
  }
  for (std::size_t k = 1; k < report.values.size(); ++k) {
    const double prev = report.values[k - 1];
    const double rise = report.values[k] - prev;
    report.max_increase = k == 1 ? rise : std::max(report.max_increase, rise);
    const double rel = rise / (1.0 + std::abs(prev));
    report.max_relative_increase = k == 1 ? rel : std::max(report.max_relative_increase, rel);
  }
  return report;
}

std::vector<std::pair<double, double>> stationarity_residual(
    std::span<const ContinuousAgent> agents, std::span<const AgentGains> gains,
    const TargetSet& targets, const Matrix& states, double epsilon,
    const SinkhornOptions& options) {
  if (agents.size() != gains.size()) throw InvalidArgument("agents and gains sizes differ");
  const Matrix cost = transport_cost_matrix(gains, states, targets.points);
  const SinkhornResult r =
      sinkhorn_solve(GibbsKernel(cost, epsilon), Vector::Zero(targets.size()), options);
  const Matrix tmp = barycentric_projection(r.coupling, targets.points);
  std::vector<std::pair<double, double>> out;
  out.reserve(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const AgentGains& g = gains[i];
    if (g.mode != Mode::continuous || g.exp_neg_AT.size() == 0) {
      throw InvalidArgument("stationarity residual needs continuous gains");
    }
    const auto col = static_cast<Eigen::Index>(i);
    const Vector weighted = g.G_weight * (states.col(col) - tmp.col(col));
    const Matrix& B = agents[i].B;
    out.emplace_back((B.transpose() * weighted).norm(),
                     (B.transpose() * g.exp_neg_AT * weighted).norm());
  }
  return out;
}

UltimateBoundCert ultimate_bound_certificate(std::span<const AgentGains> gains,
                                             const TargetSet& targets,
                                             std::span<const double> nu, double delta) {
  if (nu.size() != gains.size()) throw InvalidArgument("need one nu per agent");
  if (!(delta > 0.0)) throw InvalidArgument("delta must be > 0");
  UltimateBoundCert cert;
  cert.rbar = targets.rbar;
  cert.delta = delta;
  for (std::size_t i = 0; i < gains.size(); ++i) {
    const AgentGains& g = gains[i];
    const double kappa = kappa_bound(g.A_cl, nu[i]);
    const Matrix gap = Matrix::Identity(g.A_cl.rows(), g.A_cl.cols()) - g.A_cl;
    cert.nu.push_back(nu[i]);
    cert.rho.push_back(g.rho);
    cert.kappa.push_back(kappa);
    cert.bound.push_back(delta +
                         kappa * targets.rbar * spectral_norm(gap) / (1.0 - (g.rho + nu[i])));
  }
  return cert;
}

std::vector<double> default_nu(std::span<const AgentGains> gains) {
  std::vector<double> nu;
  nu.reserve(gains.size());
  for (const AgentGains& g : gains) nu.push_back(0.5 * (1.0 - g.rho));
  return nu;
}

std::optional<std::size_t> verify_ultimate_bound(const UltimateBoundCert& cert,
                                                 const Trajectory& trajectory) {
  const auto inside = [&](const Matrix& x) {
    if (static_cast<std::size_t>(x.cols()) != cert.bound.size()) {
      throw InvalidArgument("certificate and trajectory have different agent counts");
    }
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      if (!(x.col(i).norm() < cert.bound[static_cast<std::size_t>(i)])) return false;
    }
    return true;
  };
  std::size_t tau = trajectory.states.size();
  while (tau > 0 && inside(trajectory.states[tau - 1])) --tau;
  if (tau == trajectory.states.size()) return std::nullopt;
  return tau;
}

double accumulated_cost(const Trajectory& trajectory, double dt) {
  double total = 0.0;
  for (const Matrix& u : trajectory.inputs) {
    for (Eigen::Index i = 0; i < u.cols(); ++i) total += dt * u.col(i).squaredNorm();
  }
  return total;
}

}  // namespace smpc
