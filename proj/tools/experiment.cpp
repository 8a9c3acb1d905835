#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include "smpc/entropic_ot.hpp"
#include "smpc/errors.hpp"

namespace smpc::cli {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

LogLevel log_level() {
  const char* env = std::getenv("SMPC_LOG");
  if (env == nullptr) return LogLevel::info;
  const std::string s(env);
  if (s == "quiet" || s == "0") return LogLevel::quiet;
  if (s == "debug" || s == "2") return LogLevel::debug;
  return LogLevel::info;
}

void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) <= static_cast<int>(log_level())) std::cerr << message << '\n';
}

// ---- config <-> json ---------------------------------------------------------

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
    throw ConfigError(std::string(what) + ": expected a non-empty array of rows");
  }
  const std::size_t cols = j.front().size();
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw ConfigError(std::string(what) + ": rows have different lengths");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(std::string(what) + ": non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

namespace {

// Points are listed one state vector per agent, i.e. the transpose of the n x N storage.
json points_to_json(const Matrix& p) { return matrix_to_json(p.transpose()); }
Matrix points_from_json(const json& j, const char* what) {
  return matrix_from_json(j, what).transpose();
}

json agent_to_json(const AgentModel& a) {
  json j = json::object();
  if (!a.preset.empty()) {
    j["preset"] = a.preset;
  } else {
    j["A"] = matrix_to_json(a.A);
    j["B"] = matrix_to_json(a.B);
  }
  return j;
}

void check_keys(const json& j, const char* what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* k) { return item.key() == k; })) {
      throw ConfigError(std::string(what) + ": unknown key \"" + item.key() + "\"");
    }
  }
}

AgentModel agent_from_json(const json& j) {
  check_keys(j, "agents", {"preset", "A", "B"});
  AgentModel a;
  if (j.contains("preset")) {
    if (j.contains("A") || j.contains("B")) {
      throw ConfigError("agents: give either a preset or A and B, not both");
    }
    a.preset = j.at("preset").get<std::string>();
    if (a.preset != "double-integrator") {
      throw ConfigError("agents: unknown preset \"" + a.preset + "\"");
    }
    return a;
  }
  if (!j.contains("A") || !j.contains("B")) throw ConfigError("agents: A and B are required");
  a.A = matrix_from_json(j.at("A"), "agents.A");
  a.B = matrix_from_json(j.at("B"), "agents.B");
  return a;
}

json budget_to_json(const Budget& b) { return b ? json(*b) : json("converge"); }

Budget budget_from_json(const json& j) {
  if (j.is_string() && j.get<std::string>() == "converge") return std::nullopt;
  if (j.is_number_integer() && j.get<long long>() >= 1 &&
      j.get<long long>() <= std::numeric_limits<int>::max()) {
    return j.get<int>();
  }
  throw ConfigError("sinkhorn_iterations: entries must be integers >= 1 or \"converge\"");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for \"") + key + "\"");
  }
}

}  // namespace

ordered_json to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["n"] = cfg.n;
  if (cfg.agents.size() == 1) {
    j["agents"] = agent_to_json(cfg.agents.front());
  } else {
    json list = json::array();
    for (const AgentModel& a : cfg.agents) list.push_back(agent_to_json(a));
    j["agents"] = list;
  }
  ordered_json t;
  t["placement"] = cfg.targets.placement;
  if (cfg.targets.placement == "explicit") {
    t["points"] = points_to_json(cfg.targets.points);
  } else {
    t["low"] = cfg.targets.low;
    t["high"] = cfg.targets.high;
  }
  j["targets"] = t;
  ordered_json init;
  init["placement"] = cfg.initial.placement;
  if (cfg.initial.placement == "explicit") {
    init["points"] = points_to_json(cfg.initial.points);
  } else {
    init["low"] = cfg.initial.low;
    init["high"] = cfg.initial.high;
  }
  j["initial"] = init;
  j["mode"] = to_string(cfg.mode);
  j["epsilon"] = cfg.epsilon;
  j["T_h"] = cfg.T_h;
  j["tau_h"] = cfg.tau_h;
  j["h"] = cfg.h ? json(*cfg.h) : json(nullptr);
  j["n_steps"] = cfg.n_steps;
  json budgets = json::array();
  for (const Budget& b : cfg.sinkhorn_iterations) budgets.push_back(budget_to_json(b));
  j["sinkhorn_iterations"] = budgets;
  j["baseline"] = cfg.baseline;
  j["sinkhorn_tol"] = cfg.sinkhorn_tol;
  j["sinkhorn_max_iter"] = cfg.sinkhorn_max_iter;
  j["seed"] = cfg.seed;
  j["stride"] = cfg.stride;
  j["delta"] = cfg.delta;
  j["output_dir"] = cfg.output_dir;
  j["emit"] = {{"csv", cfg.emit_csv}, {"svg", cfg.emit_svg}, {"summary", cfg.emit_summary}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"n", "agents", "targets", "initial", "mode", "epsilon", "T_h", "tau_h", "h",
              "n_steps", "sinkhorn_iterations", "baseline", "sinkhorn_tol", "sinkhorn_max_iter",
              "seed", "stride", "delta", "output_dir", "emit"});
  ExperimentConfig cfg;
  read(j, "n", cfg.n);
  if (j.contains("agents")) {
    const json& a = j.at("agents");
    cfg.agents.clear();
    if (a.is_array()) {
      for (const json& item : a) cfg.agents.push_back(agent_from_json(item));
    } else {
      cfg.agents.push_back(agent_from_json(a));
    }
  }
  if (j.contains("targets")) {
    const json& t = j.at("targets");
    check_keys(t, "targets", {"placement", "low", "high", "points"});
    read(t, "placement", cfg.targets.placement);
    read(t, "low", cfg.targets.low);
    read(t, "high", cfg.targets.high);
    if (t.contains("points")) cfg.targets.points = points_from_json(t.at("points"), "targets");
  }
  if (j.contains("initial")) {
    const json& s = j.at("initial");
    check_keys(s, "initial", {"placement", "low", "high", "points"});
    read(s, "placement", cfg.initial.placement);
    read(s, "low", cfg.initial.low);
    read(s, "high", cfg.initial.high);
    if (s.contains("points")) cfg.initial.points = points_from_json(s.at("points"), "initial");
  }
  if (j.contains("mode")) {
    std::string mode;
    read(j, "mode", mode);
    if (mode == "discrete") {
      cfg.mode = Mode::discrete;
    } else if (mode == "continuous") {
      cfg.mode = Mode::continuous;
    } else {
      throw ConfigError("mode must be \"discrete\" or \"continuous\"");
    }
  }
  read(j, "epsilon", cfg.epsilon);
  read(j, "T_h", cfg.T_h);
  read(j, "tau_h", cfg.tau_h);
  if (j.contains("h") && !j.at("h").is_null()) {
    double h = 0.0;
    read(j, "h", h);
    cfg.h = h;
  }
  read(j, "n_steps", cfg.n_steps);
  if (j.contains("sinkhorn_iterations")) {
    const json& s = j.at("sinkhorn_iterations");
    cfg.sinkhorn_iterations.clear();
    if (s.is_array()) {
      for (const json& b : s) cfg.sinkhorn_iterations.push_back(budget_from_json(b));
    } else {
      cfg.sinkhorn_iterations.push_back(budget_from_json(s));
    }
  }
  read(j, "baseline", cfg.baseline);
  read(j, "sinkhorn_tol", cfg.sinkhorn_tol);
  read(j, "sinkhorn_max_iter", cfg.sinkhorn_max_iter);
  read(j, "seed", cfg.seed);
  read(j, "stride", cfg.stride);
  read(j, "delta", cfg.delta);
  read(j, "output_dir", cfg.output_dir);
  if (j.contains("emit")) {
    const json& e = j.at("emit");
    check_keys(e, "emit", {"csv", "svg", "summary"});
    read(e, "csv", cfg.emit_csv);
    read(e, "svg", cfg.emit_svg);
    read(e, "summary", cfg.emit_summary);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---- instance ----------------------------------------------------------------

namespace {

ContinuousAgent resolve_agent(const AgentModel& a) {
  if (a.preset == "double-integrator") {
    Matrix A(2, 2);
    A << 0, 1, 0, 0;
    Matrix B(2, 1);
    B << 0, 1;
    return ContinuousAgent(A, B);
  }
  return ContinuousAgent(a.A, a.B);
}

double spaced(double low, double high, int j, int count) {
  if (count == 1) return 0.5 * (low + high);
  return low + (high - low) * static_cast<double>(j) / static_cast<double>(count - 1);
}

Matrix generate_targets(const TargetSpec& spec, Eigen::Index n, int N) {
  if (spec.placement == "explicit") {
    if (spec.points.rows() != n || spec.points.cols() != N) {
      throw ConfigError("targets: explicit points must be N state vectors of dimension n");
    }
    return spec.points;
  }
  Matrix p = Matrix::Zero(n, N);
  if (spec.placement == "line") {
    for (int j = 0; j < N; ++j) p(0, j) = spaced(spec.low, spec.high, j, N);
  } else if (spec.placement == "grid") {
    if (n < 2) throw ConfigError("targets: grid placement needs state dimension >= 2");
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(N))));
    for (int j = 0; j < N; ++j) {
      p(0, j) = spaced(spec.low, spec.high, j % side, side);
      p(1, j) = spaced(spec.low, spec.high, j / side, side);
    }
  } else {
    throw ConfigError("targets: placement must be line, grid or explicit");
  }
  return p;
}

Matrix generate_initial(const InitialSpec& spec, Eigen::Index n, int N, std::uint64_t seed) {
  if (spec.placement == "explicit") {
    if (spec.points.rows() != n || spec.points.cols() != N) {
      throw ConfigError("initial: explicit points must be N state vectors of dimension n");
    }
    return spec.points;
  }
  if (spec.placement != "box") throw ConfigError("initial: placement must be box or explicit");
  if (static_cast<Eigen::Index>(spec.low.size()) != n ||
      static_cast<Eigen::Index>(spec.high.size()) != n) {
    throw ConfigError("initial: box bounds must have one entry per state component");
  }
  std::mt19937_64 rng(seed);
  Matrix x(n, N);
  for (int i = 0; i < N; ++i) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto k = static_cast<std::size_t>(c);
      if (!(spec.low[k] <= spec.high[k])) throw ConfigError("initial: box has low > high");
      std::uniform_real_distribution<double> dist(spec.low[k], spec.high[k]);
      x(c, i) = dist(rng);
    }
  }
  return x;
}

}  // namespace

Instance build_instance(const ExperimentConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("n must be >= 1");
  const auto N = static_cast<std::size_t>(cfg.n);
  if (cfg.agents.size() != 1 && cfg.agents.size() != N) {
    throw ConfigError("agents: give one shared model or exactly n models");
  }
  if (!(cfg.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (cfg.n_steps < 1) throw ConfigError("n_steps must be >= 1");
  if (!(cfg.step() > 0.0)) throw ConfigError("h must be > 0");
  if (!(cfg.delta > 0.0)) throw ConfigError("delta must be > 0");
  if (cfg.mode == Mode::discrete && cfg.tau_h < 1) throw ConfigError("tau_h must be >= 1");
  if (cfg.mode == Mode::continuous && !(cfg.T_h > 0.0)) throw ConfigError("T_h must be > 0");
  if (cfg.mode == Mode::continuous && cfg.baseline) {
    throw ConfigError("the unregularized baseline is only defined in discrete mode");
  }
  if (cfg.mode == Mode::discrete && cfg.sinkhorn_iterations.empty() && !cfg.baseline) {
    throw ConfigError("nothing to run: sinkhorn_iterations is empty and baseline is off");
  }

  Instance inst;
  inst.h = cfg.step();
  try {
    for (std::size_t i = 0; i < N; ++i) {
      inst.continuous.push_back(resolve_agent(cfg.agents[cfg.agents.size() == 1 ? 0 : i]));
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("agents: ") + e.what());
  }
  const Eigen::Index n = inst.continuous.front().n();
  for (const ContinuousAgent& a : inst.continuous) {
    if (a.n() != n) throw ConfigError("agents: all agents must share the state dimension");
  }
  inst.targets = generate_targets(cfg.targets, n, cfg.n);
  inst.initial = generate_initial(cfg.initial, n, cfg.n, cfg.seed);
  if (cfg.mode == Mode::discrete) {
    for (const ContinuousAgent& a : inst.continuous) {
      inst.discrete.push_back(zoh_discretize(a, inst.h));
    }
  }
  return inst;
}

// ---- runs --------------------------------------------------------------------

std::string run_label(const Budget& budget) {
  return budget ? "s" + std::to_string(*budget) : "converge";
}

namespace {

SimConfig sim_config(const ExperimentConfig& cfg, double h) {
  SimConfig s;
  s.epsilon = cfg.epsilon;
  s.T_h = cfg.T_h;
  s.tau_h = cfg.tau_h;
  s.h = h;
  s.n_steps = cfg.n_steps;
  s.sinkhorn_tol = cfg.sinkhorn_tol;
  s.sinkhorn_max_iter = cfg.sinkhorn_max_iter;
  s.seed = cfg.seed;
  s.stride = cfg.stride;
  return s;
}

struct TargetGaps {
  double euclidean = 0.0;  // max_i min_j ||x_i - x_j^d||_2
  double componentwise = 0.0;  // max_i min_j ||x_i - x_j^d||_inf
};

TargetGaps final_gaps(const Matrix& x, const Matrix& targets) {
  TargetGaps g;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    double e = std::numeric_limits<double>::infinity();
    double c = e;
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      const Vector d = x.col(i) - targets.col(j);
      e = std::min(e, d.norm());
      c = std::min(c, d.cwiseAbs().maxCoeff());
    }
    g.euclidean = std::max(g.euclidean, e);
    g.componentwise = std::max(g.componentwise, c);
  }
  return g;
}

double max_column_norm(const Matrix& m) { return m.colwise().norm().maxCoeff(); }

void add_common(ordered_json& s, const std::string& label, const std::string& controller,
                const ExperimentConfig& cfg, const Instance& inst, const Trajectory& traj) {
  s["label"] = label;
  s["mode"] = to_string(cfg.mode);
  s["controller"] = controller;
  s["n_agents"] = cfg.n;
  s["n_steps"] = cfg.n_steps;
  s["dt"] = inst.h;
  s["epsilon"] = cfg.epsilon;
  s["seed"] = cfg.seed;
  s["accumulated_cost"] = accumulated_cost(traj, inst.h);
  const TargetGaps gaps = final_gaps(traj.states.back(), inst.targets);
  s["final_max_target_distance"] = gaps.euclidean;
  s["final_max_target_gap_inf"] = gaps.componentwise;
  std::size_t total = 0;
  std::size_t worst = 0;
  for (std::size_t it : traj.sinkhorn_iterations) {
    total += it;
    worst = std::max(worst, it);
  }
  s["sinkhorn_iterations_total"] = total;
  s["sinkhorn_iterations_max_step"] = worst;
}

void add_certificate(ordered_json& s, const ExperimentConfig& cfg, const TargetSet& ts,
                     std::span<const AgentGains> gains, const Trajectory& traj) {
  const std::vector<double> nu = default_nu(gains);
  const UltimateBoundCert cert = ultimate_bound_certificate(gains, ts, nu, cfg.delta);
  const std::optional<std::size_t> tau = verify_ultimate_bound(cert, traj);
  s["bound_delta"] = cfg.delta;
  s["bound_max"] = *std::max_element(cert.bound.begin(), cert.bound.end());
  s["bound_holds"] = tau.has_value();
  s["bound_settle_step"] = tau ? json(*tau) : json(nullptr);
}

RunResult run_discrete(const ExperimentConfig& cfg, const Instance& inst, const TargetSet& ts,
                       std::span<const AgentGains> gains, const Budget& budget) {
  SimConfig sc = sim_config(cfg, inst.h);
  sc.sinkhorn_iterations = budget;
  RunResult r;
  r.label = run_label(budget);
  r.targets = inst.targets;
  log(LogLevel::info, "running " + r.label);
  r.trajectory = simulate_sinkhorn_mpc(inst.discrete, ts, inst.initial, sc);
  add_common(r.summary, r.label, "sinkhorn", cfg, inst, r.trajectory);
  r.summary["sinkhorn_budget"] = budget_to_json(budget);

  // Residual to the temporary targets of the converged coupling at the final state.
  const Matrix& x = r.trajectory.states.back();
  const Matrix cost = transport_cost_matrix(gains, x, inst.targets);
  const SinkhornResult ot = sinkhorn_solve(GibbsKernel(cost, cfg.epsilon),
                                           r.trajectory.log_alpha.back(),
                                           {cfg.sinkhorn_tol, cfg.sinkhorn_max_iter});
  r.summary["final_max_tmp_residual"] =
      max_column_norm(x - barycentric_projection(ot.coupling, inst.targets));
  r.summary["final_marginal_violation"] = ot.violation;
  add_certificate(r.summary, cfg, ts, gains, r.trajectory);
  return r;
}

RunResult run_baseline(const ExperimentConfig& cfg, const Instance& inst, const TargetSet& ts,
                       std::span<const AgentGains> gains) {
  RunResult r;
  r.label = "baseline";
  r.targets = inst.targets;
  log(LogLevel::info, "running baseline");
  r.trajectory = simulate_unregularized_mpc(inst.discrete, ts, inst.initial,
                                            sim_config(cfg, inst.h));
  add_common(r.summary, r.label, "unregularized", cfg, inst, r.trajectory);
  const Matrix& x = r.trajectory.states.back();
  const Assignment a = exact_assignment(transport_cost_matrix(gains, x, inst.targets));
  double residual = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    residual = std::max(residual, (x.col(i) - inst.targets.col(a.sigma[i])).norm());
  }
  r.summary["final_max_tmp_residual"] = residual;
  add_certificate(r.summary, cfg, ts, gains, r.trajectory);
  return r;
}

RunResult run_continuous(const ExperimentConfig& cfg, const Instance& inst) {
  const TargetSet ts = make_target_set(inst.continuous, inst.targets);
  std::vector<AgentGains> gains;
  for (const ContinuousAgent& a : inst.continuous) gains.push_back(continuous_gramian(a, cfg.T_h));
  RunResult r;
  r.label = "continuous";
  r.targets = inst.targets;
  log(LogLevel::info, "running continuous");
  r.trajectory = simulate_continuous(inst.continuous, ts, inst.initial, sim_config(cfg, inst.h));
  add_common(r.summary, r.label, "continuous", cfg, inst, r.trajectory);

  const SinkhornOptions options{cfg.sinkhorn_tol, cfg.sinkhorn_max_iter};
  const Matrix& x = r.trajectory.states.back();
  const Matrix cost = transport_cost_matrix(gains, x, inst.targets);
  const SinkhornResult ot = sinkhorn_solve(GibbsKernel(cost, cfg.epsilon),
                                           Vector::Zero(cfg.n), options);
  r.summary["final_max_tmp_residual"] =
      max_column_norm(x - barycentric_projection(ot.coupling, inst.targets));
  double stationarity = 0.0;
  for (const auto& [first, second] :
       stationarity_residual(inst.continuous, gains, ts, x, cfg.epsilon, options)) {
    stationarity = std::max({stationarity, first, second});
  }
  r.summary["final_stationarity_residual"] = stationarity;
  const std::vector<double>& E = r.trajectory.lyapunov;
  double rise = 0.0;
  for (std::size_t k = 1; k < E.size(); ++k) {
    rise = std::max(rise, (E[k] - E[k - 1]) / (1.0 + std::abs(E[k - 1])));
  }
  r.summary["lyapunov_initial"] = E.front();
  r.summary["lyapunov_final"] = E.back();
  r.summary["lyapunov_max_relative_increase"] = rise;
  return r;
}

}  // namespace

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg) {
  const Instance inst = build_instance(cfg);
  std::vector<RunResult> runs;
  if (cfg.mode == Mode::continuous) {
    runs.push_back(run_continuous(cfg, inst));
    return runs;
  }
  const TargetSet ts = make_target_set(inst.discrete, inst.targets);
  std::vector<AgentGains> gains;
  for (const DiscreteAgent& a : inst.discrete) gains.push_back(reachability_gramian(a, cfg.tau_h));

  std::vector<Budget> budgets = cfg.sinkhorn_iterations;
  std::sort(budgets.begin(), budgets.end(), [](const Budget& a, const Budget& b) {
    if (!a || !b) return a.has_value() && !b.has_value();
    return *a < *b;
  });
  budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
  for (const Budget& b : budgets) runs.push_back(run_discrete(cfg, inst, ts, gains, b));
  if (cfg.baseline) runs.push_back(run_baseline(cfg, inst, ts, gains));
  return runs;
}

// ---- output ------------------------------------------------------------------

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index n = traj.states.front().rows();
  const Eigen::Index N = traj.states.front().cols();
  const Eigen::Index m = traj.inputs.empty() ? 0 : traj.inputs.front().rows();
  os << "step,time,agent";
  for (Eigen::Index c = 0; c < n; ++c) os << ",x" << c;
  for (Eigen::Index c = 0; c < m; ++c) os << ",u" << c;
  os << '\n';
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const Matrix& x = traj.states[k];
    for (Eigen::Index i = 0; i < N; ++i) {
      os << k << ',' << format_double(traj.times[k]) << ',' << i;
      for (Eigen::Index c = 0; c < n; ++c) os << ',' << format_double(x(c, i));
      // The last state has no input applied after it.
      for (Eigen::Index c = 0; c < m; ++c) {
        os << ',';
        if (k < traj.inputs.size()) os << format_double(traj.inputs[k](c, i));
      }
      os << '\n';
    }
  }
}

namespace {

std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

void write_trajectory_svg(std::ostream& os, const Trajectory& traj, const Matrix& targets) {
  const Eigen::Index n = traj.states.front().rows();
  const Eigen::Index N = traj.states.front().cols();
  const double W = 720.0;
  const double H = 220.0;
  const double left = 60.0;
  const double right = 20.0;
  const double top = 20.0;
  const double bottom = 30.0;
  const double t_end = traj.times.back() > 0.0 ? traj.times.back() : 1.0;

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
     << H * static_cast<double>(n) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (Eigen::Index c = 0; c < n; ++c) {
    double lo = targets.row(c).minCoeff();
    double hi = targets.row(c).maxCoeff();
    for (const Matrix& x : traj.states) {
      lo = std::min(lo, x.row(c).minCoeff());
      hi = std::max(hi, x.row(c).maxCoeff());
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double y0 = H * static_cast<double>(c);
    const auto px = [&](double t) { return left + (W - left - right) * t / t_end; };
    const auto py = [&](double v) { return y0 + top + (H - top - bottom) * (hi - v) / (hi - lo); };

    os << "<g>\n<rect x=\"" << left << "\" y=\"" << y0 + top << "\" width=\""
       << W - left - right << "\" height=\"" << H - top - bottom
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left << "\" y=\"" << y0 + top - 6 << "\">x" << c << "</text>\n";
    os << "<text x=\"" << left - 4 << "\" y=\"" << svg_num(py(hi - pad))
       << "\" text-anchor=\"end\">" << svg_num(hi - pad) << "</text>\n";
    os << "<text x=\"" << left - 4 << "\" y=\"" << svg_num(py(lo + pad))
       << "\" text-anchor=\"end\">" << svg_num(lo + pad) << "</text>\n";
    os << "<text x=\"" << W - right << "\" y=\"" << y0 + H - 10
       << "\" text-anchor=\"end\">t = " << svg_num(t_end) << "</text>\n";
    for (Eigen::Index i = 0; i < N; ++i) {
      os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
      for (std::size_t k = 0; k < traj.states.size(); ++k) {
        if (k > 0) os << ' ';
        os << svg_num(px(traj.times[k])) << ',' << svg_num(py(traj.states[k](c, i)));
      }
      os << "\"/>\n";
      os << "<circle cx=\"" << svg_num(px(0.0)) << "\" cy=\""
         << svg_num(py(traj.states.front()(c, i))) << "\" r=\"3\" fill=\"steelblue\"/>\n";
    }
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      os << "<circle cx=\"" << svg_num(px(t_end)) << "\" cy=\"" << svg_num(py(targets(c, j)))
         << "\" r=\"4\" fill=\"none\" stroke=\"firebrick\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

void write_run(const ExperimentConfig& cfg, const RunResult& run,
               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (cfg.emit_csv) {
    std::ostringstream os;
    write_trajectory_csv(os, run.trajectory);
    write_file(dir / "trajectory.csv", os.str());
  }
  if (cfg.emit_svg) {
    std::ostringstream os;
    write_trajectory_svg(os, run.trajectory, run.targets);
    write_file(dir / "trajectory.svg", os.str());
  }
  if (cfg.emit_summary) write_file(dir / "summary.json", run.summary.dump(2) + "\n");
}

}  // namespace

void write_outputs(const ExperimentConfig& cfg, const std::vector<RunResult>& runs) {
  const std::filesystem::path root(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw ConfigError("cannot create " + root.string() + ": " + ec.message());
  write_file(root / "config.json", to_json(cfg).dump(2) + "\n");
  if (runs.size() == 1) {
    write_run(cfg, runs.front(), root);
    return;
  }
  ordered_json sweep;
  std::string order;
  for (const RunResult& r : runs) {
    write_run(cfg, r, root / r.label);
    order += (order.empty() ? "" : ",") + r.label;
  }
  sweep["runs"] = order;
  for (const RunResult& r : runs) {
    sweep["accumulated_cost." + r.label] = r.summary["accumulated_cost"];
  }
  for (const RunResult& r : runs) {
    if (r.summary.contains("bound_holds")) {
      sweep["bound_holds." + r.label] = r.summary["bound_holds"];
    }
  }
  if (cfg.emit_summary) write_file(root / "summary.json", sweep.dump(2) + "\n");
}

void write_matrix_csv(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) os << ',';
      os << format_double(m(r, c));
    }
    os << '\n';
  }
}

Matrix read_cost_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || std::string(end).find_first_not_of(" \t") != std::string::npos) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": not a number: \"" + cell + "\"");
      }
      if (!std::isfinite(v) || v < 0.0) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": costs must be finite and >= 0");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path + ": empty cost file");
  for (const auto& row : rows) {
    if (row.size() != rows.size()) {
      throw ConfigError(path + ": cost matrix must be square (" + std::to_string(rows.size()) +
                        " rows, a row with " + std::to_string(row.size()) + " entries)");
    }
  }
  const auto N = static_cast<Eigen::Index>(rows.size());
  Matrix C(N, N);
  for (Eigen::Index r = 0; r < N; ++r)
    for (Eigen::Index c = 0; c < N; ++c)
      C(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return C;
}

}  // namespace smpc::cli
