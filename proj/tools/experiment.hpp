#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "smpc/lti_core.hpp"
#include "smpc/sim.hpp"

namespace smpc::cli {

/// Malformed or inconsistent experiment input. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Either a named preset ("double-integrator") or explicit continuous-time A, B.
struct AgentModel {
  std::string preset;
  Matrix A;
  Matrix B;
};

/// line:     x_j = [p_j, 0, ...], p_j evenly spaced on [low, high]
/// grid:     first two components on a near-square grid over [low, high]^2
/// explicit: `points` (n x N)
struct TargetSpec {
  std::string placement = "line";
  double low = -1.0;
  double high = 1.0;
  Matrix points;
};

/// box:      component c uniform in [low[c], high[c]], drawn from the config seed
/// explicit: `points` (n x N)
struct InitialSpec {
  std::string placement = "box";
  std::vector<double> low{-1.0, 0.0};
  std::vector<double> high{1.0, 0.0};
  Matrix points;
};

/// Sinkhorn iterations per step; empty means iterate to convergence.
using Budget = std::optional<int>;

struct ExperimentConfig {
  int n = 40;
  std::vector<AgentModel> agents{AgentModel{"double-integrator", {}, {}}};
  TargetSpec targets;
  InitialSpec initial;
  Mode mode = Mode::discrete;
  double epsilon = 0.7;
  double T_h = 1.0;
  int tau_h = 50;
  std::optional<double> h;  // unset: 0.02 discrete, 0.01 T_h continuous
  std::size_t n_steps = 500;
  std::vector<Budget> sinkhorn_iterations{20};
  bool baseline = false;
  double sinkhorn_tol = 1e-9;
  std::size_t sinkhorn_max_iter = 1'000'000;
  std::uint64_t seed = 1;
  std::size_t stride = 0;
  double delta = 0.1;
  std::string output_dir = "smpc_out";
  bool emit_csv = true;
  bool emit_svg = true;
  bool emit_summary = true;

  double step() const { return h ? *h : (mode == Mode::discrete ? 0.02 : 0.01 * T_h); }
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys and wrong types are ConfigErrors.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

Matrix matrix_from_json(const nlohmann::json& j, const char* what);
nlohmann::json matrix_to_json(const Matrix& m);

/// Agents, targets and initial states resolved from a config.
struct Instance {
  std::vector<ContinuousAgent> continuous;
  std::vector<DiscreteAgent> discrete;  // ZOH samples of `continuous`, discrete mode only
  Matrix targets;
  Matrix initial;
  double h = 0.0;
};

Instance build_instance(const ExperimentConfig& cfg);

struct RunResult {
  std::string label;
  Trajectory trajectory;
  Matrix targets;
  nlohmann::ordered_json summary;
};

std::string run_label(const Budget& budget);

/// One run per budget (ascending, "converge" last), then the baseline if requested.
/// Continuous mode always solves to tolerance and ignores the budgets.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg);

/// Writes per-run artifacts. A single run goes straight into output_dir,
/// several runs into output_dir/<label>/ with a sweep summary on top.
void write_outputs(const ExperimentConfig& cfg, const std::vector<RunResult>& runs);

void write_trajectory_csv(std::ostream& os, const Trajectory& trajectory);
void write_trajectory_svg(std::ostream& os, const Trajectory& trajectory, const Matrix& targets);

/// Comma-separated numeric rows; the matrix must be square and nonnegative.
Matrix read_cost_csv(const std::string& path);
void write_matrix_csv(std::ostream& os, const Matrix& m);

/// %.17g
std::string format_double(double v);

enum class LogLevel { quiet = 0, info = 1, debug = 2 };
/// From SMPC_LOG: quiet|info|debug or 0|1|2. Defaults to info.
LogLevel log_level();
void log(LogLevel level, const std::string& message);

}  // namespace smpc::cli
