#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "experiment.hpp"
#include "smpc/entropic_ot.hpp"
#include "smpc/errors.hpp"
#include "smpc/lti_core.hpp"

using namespace smpc;
using namespace smpc::cli;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;

struct SimulateArgs {
  std::string config;
  std::string dump_config;
  std::optional<int> n;
  std::optional<double> epsilon;
  std::optional<int> tau;
  std::optional<double> T_h;
  std::optional<double> h;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  std::vector<std::string> budgets;
  bool baseline = false;
  bool no_csv = false;
  bool no_svg = false;
  bool no_summary = false;
};

ExperimentConfig resolve(const SimulateArgs& a) {
  ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  if (a.n) cfg.n = *a.n;
  if (a.epsilon) cfg.epsilon = *a.epsilon;
  if (a.tau) cfg.tau_h = *a.tau;
  if (a.T_h) cfg.T_h = *a.T_h;
  if (a.h) cfg.h = *a.h;
  if (a.steps) cfg.n_steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  if (a.mode) {
    if (*a.mode == "discrete") {
      cfg.mode = Mode::discrete;
    } else if (*a.mode == "continuous") {
      cfg.mode = Mode::continuous;
    } else {
      throw ConfigError("--mode must be discrete or continuous");
    }
  }
  if (a.out) cfg.output_dir = *a.out;
  if (!a.budgets.empty()) {
    cfg.sinkhorn_iterations.clear();
    for (const std::string& s : a.budgets) {
      if (s == "converge" || s == "inf") {
        cfg.sinkhorn_iterations.push_back(std::nullopt);
        continue;
      }
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || v < 1) throw ConfigError("--s expects an integer >= 1 or converge");
      cfg.sinkhorn_iterations.push_back(v);
    }
  }
  if (a.baseline) cfg.baseline = true;
  if (a.no_csv) cfg.emit_csv = false;
  if (a.no_svg) cfg.emit_svg = false;
  if (a.no_summary) cfg.emit_summary = false;
  return cfg;
}

int cmd_simulate(const SimulateArgs& args) {
  const ExperimentConfig cfg = resolve(args);
  if (!args.dump_config.empty()) {
    const std::string text = to_json(cfg).dump(2) + "\n";
    if (args.dump_config == "-") {
      std::cout << text;
    } else {
      std::ofstream(args.dump_config) << text;
    }
    return 0;
  }
  build_instance(cfg);  // validate before any run
  const std::vector<RunResult> runs = run_experiment(cfg);
  write_outputs(cfg, runs);
  std::printf("%-10s %22s %10s %12s\n", "run", "accumulated_cost", "bound", "max_gap");
  for (const RunResult& r : runs) {
    const auto& s = r.summary;
    const char* bound = !s.contains("bound_holds") ? "-" : s["bound_holds"].get<bool>() ? "holds"
                                                                                        : "fails";
    std::printf("%-10s %22.15g %10s %12.4g\n", r.label.c_str(),
                s["accumulated_cost"].get<double>(), bound,
                s["final_max_target_gap_inf"].get<double>());
  }
  log(LogLevel::info, "wrote " + cfg.output_dir);
  return 0;
}

int cmd_assign(const std::string& path) {
  const Matrix C = read_cost_csv(path);
  const Assignment a = exact_assignment(C);
  std::cout << "sigma";
  for (int s : a.sigma) std::cout << ' ' << s;
  std::cout << "\ncost " << format_double(a.cost) << '\n';
  return 0;
}

int cmd_sinkhorn(const std::string& path, double epsilon, double tol, std::size_t max_iter,
                 const std::string& out) {
  if (epsilon == 0.0) {
    log(LogLevel::info, "epsilon = 0: solving the exact assignment problem");
    return cmd_assign(path);
  }
  if (!(epsilon > 0.0)) throw ConfigError("--epsilon must be >= 0");
  const Matrix C = read_cost_csv(path);
  const SinkhornResult r =
      sinkhorn_solve(GibbsKernel(C, epsilon), Vector::Zero(C.rows()), {tol, max_iter});
  if (out.empty() || out == "-") {
    write_matrix_csv(std::cout, r.coupling);
  } else {
    std::ofstream os(out);
    if (!os) throw ConfigError("cannot write " + out);
    write_matrix_csv(os, r.coupling);
  }
  std::cerr << "iterations " << r.iterations << "\nmarginal_violation "
            << format_double(r.violation) << '\n';
  return 0;
}

void print_matrix(const char* name, const Matrix& m) {
  std::cout << name << " =\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::cout << "  ";
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::printf("%s%.10g", c > 0 ? "  " : "", m(r, c));
    }
    std::cout << '\n';
  }
}

struct GramianArgs {
  std::string preset = "double-integrator";
  std::string A;
  std::string B;
  std::string mode = "continuous";
  double horizon = 1.0;
  double h = 0.02;
};

Matrix parse_matrix_flag(const std::string& text, const char* what) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw ConfigError(std::string(what) + ": expected a JSON array of rows");
  }
  return matrix_from_json(j, what);
}

int cmd_gramian(const GramianArgs& a) {
  ContinuousAgent agent = [&] {
    if (!a.A.empty() || !a.B.empty()) {
      return ContinuousAgent(parse_matrix_flag(a.A, "--A"), parse_matrix_flag(a.B, "--B"));
    }
    if (a.preset != "double-integrator") throw ConfigError("unknown preset " + a.preset);
    Matrix A(2, 2);
    A << 0, 1, 0, 0;
    Matrix B(2, 1);
    B << 0, 1;
    return ContinuousAgent(A, B);
  }();
  AgentGains g;
  try {
    if (a.mode == "continuous") {
      g = continuous_gramian(agent, a.horizon);
      print_matrix("W", g.W);
      print_matrix("G_weight (W^-1)", g.G_weight);
      print_matrix("feedback (B^T W^-1)", g.feedback);
      print_matrix("exp(-A^T T)", g.exp_neg_AT);
    } else if (a.mode == "discrete") {
      const double steps = a.horizon;
      if (steps != static_cast<double>(static_cast<int>(steps)) || steps < 1) {
        throw ConfigError("discrete --horizon is a step count >= 1");
      }
      const DiscreteAgent d = zoh_discretize(agent, a.h);
      print_matrix("A_d", d.A);
      print_matrix("B_d", d.B);
      g = reachability_gramian(d, static_cast<int>(steps));
      print_matrix("G", g.W);
      print_matrix("G_weight ((A^tau)^T G^-1 A^tau)", g.G_weight);
      print_matrix("feedback", g.feedback);
    } else {
      throw ConfigError("--mode must be continuous or discrete");
    }
  } catch (const NearSingularGramian& e) {
    std::cerr << "warning: Gramian condition number " << format_double(e.condition())
              << " exceeds " << format_double(kMaxGramianCondition)
              << "; the pair is not controllable over this horizon\n";
    return kNumericExit;
  }
  print_matrix("A_cl", g.A_cl);
  if (g.mode == Mode::continuous) {
    const double abscissa = g.A_cl.eigenvalues().real().maxCoeff();
    std::printf("max Re eig(A_cl) = %.10g\n", abscissa);
  } else {
    std::printf("rho(A_cl) = %.10g\n", g.rho);
  }
  std::printf("condition = %.6g\n", g.condition);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sinkhorn MPC: entropic optimal transport with minimum-energy MPC"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "run a closed-loop experiment");
  simulate->add_option("--config", sim.config, "JSON experiment config")->check(CLI::ExistingFile);
  simulate->add_option("--dump-config", sim.dump_config,
                       "write the resolved config to this path ('-' for stdout) and exit");
  simulate->add_option("--n", sim.n, "number of agents");
  simulate->add_option("--epsilon", sim.epsilon, "entropic regularization");
  simulate->add_option("--tau", sim.tau, "discrete horizon in steps");
  simulate->add_option("--T", sim.T_h, "continuous horizon");
  simulate->add_option("--dt", sim.h, "sampling period or integration step");
  simulate->add_option("--steps", sim.steps, "number of time steps");
  simulate->add_option("--seed", sim.seed, "seed for the initial states");
  simulate->add_option("--mode", sim.mode, "discrete or continuous");
  simulate->add_option("--out", sim.out, "output directory");
  simulate->add_option("--s", sim.budgets,
                       "Sinkhorn iterations per step; repeat for a sweep, 'converge' for tolerance");
  simulate->add_flag("--baseline", sim.baseline, "also run the exact-assignment MPC");
  simulate->add_flag("--no-csv", sim.no_csv);
  simulate->add_flag("--no-svg", sim.no_svg);
  simulate->add_flag("--no-summary", sim.no_summary);

  std::string cost_path;
  double epsilon = 1.0;
  double tol = 1e-9;
  std::size_t max_iter = 1'000'000;
  std::string coupling_out;
  CLI::App* sinkhorn = app.add_subcommand("sinkhorn", "entropic OT coupling of a cost matrix");
  sinkhorn->add_option("cost", cost_path, "square cost matrix, CSV")->required();
  sinkhorn->add_option("--epsilon", epsilon, "regularization; 0 solves the assignment problem");
  sinkhorn->add_option("--tol", tol, "L1 marginal tolerance");
  sinkhorn->add_option("--max-iter", max_iter);
  sinkhorn->add_option("--out", coupling_out, "coupling CSV (default stdout)");

  std::string assign_path;
  CLI::App* assign = app.add_subcommand("assign", "minimum-cost permutation of a cost matrix");
  assign->add_option("cost", assign_path, "square cost matrix, CSV")->required();

  GramianArgs gram;
  CLI::App* gramian = app.add_subcommand("gramian", "print Gramians and the closed-loop matrix");
  gramian->add_option("--preset", gram.preset, "agent preset");
  gramian->add_option("--A", gram.A, "A as a JSON array of rows");
  gramian->add_option("--B", gram.B, "B as a JSON array of rows");
  gramian->add_option("--mode", gram.mode, "continuous or discrete");
  gramian->add_option("--horizon", gram.horizon, "T_h (continuous) or tau_h steps (discrete)");
  gramian->add_option("--dt", gram.h, "sampling period for discrete mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*sinkhorn) return cmd_sinkhorn(cost_path, epsilon, tol, max_iter, coupling_out);
    if (*assign) return cmd_assign(assign_path);
    if (*gramian) return cmd_gramian(gram);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericExit;
  }
  return 0;
}
