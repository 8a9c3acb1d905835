#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "experiment.hpp"
#include "oracles.hpp"
#include "smpc/entropic_ot.hpp"

using namespace smpc;
using namespace smpc::cli;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.n = 5;
  cfg.n_steps = 120;
  cfg.sinkhorn_iterations = {10};
  cfg.seed = 7;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("smpc_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

TEST(Config, DumpedConfigReparsesToTheSameExperiment) {
  ExperimentConfig cfg = small_config();
  cfg.agents = {};
  for (int i = 0; i < cfg.n; ++i) {
    Matrix A(2, 2);
    A << 0, 1, -0.1 * i, 0;
    Matrix B(2, 1);
    B << 0, 1;
    cfg.agents.push_back(AgentModel{"", A, B});
  }
  cfg.targets.placement = "explicit";
  std::mt19937_64 rng(3);
  cfg.targets.points = oracle::random_matrix(2, cfg.n, rng);
  cfg.initial.low = {-0.3, -0.1};
  cfg.initial.high = {0.7, 0.1};
  cfg.epsilon = 0.1 + 1.0 / 3.0;
  cfg.h = 0.013;
  cfg.sinkhorn_iterations = {30, std::nullopt, 2};
  cfg.baseline = true;
  cfg.emit_svg = false;

  const std::string text = to_json(cfg).dump(2);
  const ExperimentConfig back = config_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(to_json(back).dump(2), text);

  const Instance a = build_instance(cfg);
  const Instance b = build_instance(back);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_EQ(a.initial, b.initial);
  EXPECT_EQ(a.h, b.h);
  ASSERT_EQ(a.discrete.size(), b.discrete.size());
  for (std::size_t i = 0; i < a.discrete.size(); ++i) {
    EXPECT_EQ(a.discrete[i].A, b.discrete[i].A);
    EXPECT_EQ(a.discrete[i].B, b.discrete[i].B);
  }
}

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig cfg;
  const std::string text = to_json(cfg).dump();
  EXPECT_EQ(to_json(config_from_json(nlohmann::json::parse(text))).dump(), text);
}

TEST(Config, MissingKeysKeepDefaults) {
  const ExperimentConfig cfg = config_from_json(nlohmann::json::parse(R"({"n": 3})"));
  EXPECT_EQ(cfg.n, 3);
  EXPECT_EQ(cfg.tau_h, 50);
  EXPECT_DOUBLE_EQ(cfg.step(), 0.02);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  using nlohmann::json;
  EXPECT_THROW(config_from_json(json::parse(R"({"epsilom": 1})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"n": "five"})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"mode": "hybrid"})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"sinkhorn_iterations": [0]})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"agents": {"preset": "unicycle"}})")),
               ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"targets": {"points": [[1, 2], [3]]}})")),
               ConfigError);
}

TEST(Config, DimensionsAreValidatedBeforeRunning) {
  ExperimentConfig cfg = small_config();
  cfg.initial.low = {-1.0};
  EXPECT_THROW(build_instance(cfg), ConfigError);

  cfg = small_config();
  cfg.targets.placement = "explicit";
  cfg.targets.points = Matrix::Zero(2, cfg.n + 1);
  EXPECT_THROW(build_instance(cfg), ConfigError);

  cfg = small_config();
  cfg.agents = {AgentModel{"double-integrator", {}, {}}, AgentModel{"double-integrator", {}, {}}};
  EXPECT_THROW(build_instance(cfg), ConfigError);

  cfg = small_config();
  cfg.mode = Mode::continuous;
  cfg.baseline = true;
  EXPECT_THROW(build_instance(cfg), ConfigError);
}

TEST(Instance, LineTargetsAreEvenlySpacedWithZeroVelocity) {
  ExperimentConfig cfg = small_config();
  cfg.targets.low = -2.0;
  cfg.targets.high = 2.0;
  const Instance inst = build_instance(cfg);
  for (int j = 0; j < cfg.n; ++j) {
    EXPECT_DOUBLE_EQ(inst.targets(0, j), -2.0 + j);
    EXPECT_EQ(inst.targets(1, j), 0.0);
  }
}

TEST(Instance, GridTargetsFillCellsRowByRow) {
  ExperimentConfig cfg = small_config();
  cfg.targets.placement = "grid";
  cfg.targets.low = 0.0;
  cfg.targets.high = 1.0;
  const Instance inst = build_instance(cfg);  // 5 targets on a 3 x 3 grid
  Matrix expected(2, 5);
  expected << 0, 0.5, 1, 0, 0.5,
              0, 0, 0, 0.5, 0.5;
  EXPECT_EQ(inst.targets, expected);
}

TEST(Instance, InitialStatesComeFromTheSeedAndStayInTheBox) {
  ExperimentConfig cfg = small_config();
  cfg.n = 50;
  cfg.initial.low = {-1.0, -0.5};
  cfg.initial.high = {1.0, 0.25};
  const Matrix x = build_instance(cfg).initial;
  EXPECT_EQ(x, build_instance(cfg).initial);
  EXPECT_GE(x.row(0).minCoeff(), -1.0);
  EXPECT_LT(x.row(0).maxCoeff(), 1.0);
  EXPECT_GE(x.row(1).minCoeff(), -0.5);
  EXPECT_LT(x.row(1).maxCoeff(), 0.25);
  cfg.seed += 1;
  EXPECT_NE(x, build_instance(cfg).initial);
}

TEST(Experiment, SweepRunsInIncreasingBudgetOrder) {
  ExperimentConfig cfg = small_config();
  cfg.n_steps = 20;
  cfg.sinkhorn_iterations = {30, std::nullopt, 10, 30};
  cfg.baseline = true;
  std::vector<std::string> labels;
  for (const RunResult& r : run_experiment(cfg)) labels.push_back(r.label);
  EXPECT_EQ(labels, (std::vector<std::string>{"s10", "s30", "converge", "baseline"}));
}

TEST(Experiment, SingleAgentSettlesOnItsTarget) {
  ExperimentConfig cfg = small_config();
  cfg.n = 1;
  cfg.n_steps = 500;
  const auto runs = run_experiment(cfg);
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_LT(runs[0].summary["final_max_tmp_residual"].get<double>(), 1e-6);
  EXPECT_LT(runs[0].summary["final_max_target_distance"].get<double>(), 1e-6);
  EXPECT_TRUE(runs[0].summary["bound_holds"].get<bool>());
}

TEST(Experiment, ContinuousSummaryCarriesResiduals) {
  ExperimentConfig cfg = small_config();
  cfg.mode = Mode::continuous;
  cfg.n = 4;
  cfg.n_steps = 200;
  const auto runs = run_experiment(cfg);
  ASSERT_EQ(runs.size(), 1u);
  const auto& s = runs[0].summary;
  EXPECT_EQ(s["label"], "continuous");
  EXPECT_DOUBLE_EQ(s["dt"].get<double>(), 0.01);
  EXPECT_LE(s["lyapunov_max_relative_increase"].get<double>(), 1e-6);
  EXPECT_LT(s["lyapunov_final"].get<double>(), s["lyapunov_initial"].get<double>());
  EXPECT_TRUE(s.contains("final_stationarity_residual"));
}

TEST(Output, CsvReingestReproducesSummaryStatistics) {
  const ExperimentConfig cfg = small_config();
  const RunResult run = run_experiment(cfg).front();
  std::ostringstream os;
  write_trajectory_csv(os, run.trajectory);
  const auto rows = split_csv(os.str());

  ASSERT_EQ(rows.front(), (std::vector<std::string>{"step", "time", "agent", "x0", "x1", "u0"}));
  ASSERT_EQ(rows.size(), 1 + (cfg.n_steps + 1) * static_cast<std::size_t>(cfg.n));
  const double dt = cfg.step();
  double cost = 0.0;  // step-major, agent-minor, as the library sums
  Matrix last(2, cfg.n);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    ASSERT_EQ(row.size(), 6u);
    const std::size_t step = std::stoul(row[0]);
    const int agent = std::stoi(row[2]);
    EXPECT_EQ(std::stod(row[1]), run.trajectory.times[step]);
    EXPECT_EQ(std::stod(row[3]), run.trajectory.states[step](0, agent));
    if (step == cfg.n_steps) {
      EXPECT_TRUE(row[5].empty());
      last(0, agent) = std::stod(row[3]);
      last(1, agent) = std::stod(row[4]);
    } else {
      const double u = std::stod(row[5]);
      cost += dt * (u * u);
    }
  }
  EXPECT_EQ(cost, run.summary["accumulated_cost"].get<double>());

  const Instance inst = build_instance(cfg);
  double gap = 0.0;
  for (int i = 0; i < cfg.n; ++i) {
    double best = 1e300;
    for (int j = 0; j < cfg.n; ++j) best = std::min(best, (last.col(i) - inst.targets.col(j)).norm());
    gap = std::max(gap, best);
  }
  EXPECT_EQ(gap, run.summary["final_max_target_distance"].get<double>());
}

TEST(Output, RepeatedRunsWriteIdenticalFiles) {
  ExperimentConfig cfg = small_config();
  cfg.sinkhorn_iterations = {5, std::nullopt};
  cfg.baseline = true;
  const fs::path a = scratch_dir("det_a");
  const fs::path b = scratch_dir("det_b");
  cfg.output_dir = a.string();
  write_outputs(cfg, run_experiment(cfg));
  cfg.output_dir = b.string();
  write_outputs(cfg, run_experiment(cfg));
  for (const char* run : {"s5", "converge", "baseline"}) {
    for (const char* file : {"trajectory.csv", "trajectory.svg", "summary.json"}) {
      const std::string fa = slurp(a / run / file);
      EXPECT_FALSE(fa.empty()) << run << '/' << file;
      EXPECT_EQ(fa, slurp(b / run / file)) << run << '/' << file;
    }
  }
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Output, SingleRunWritesIntoTheOutputDirectory) {
  ExperimentConfig cfg = small_config();
  cfg.emit_svg = false;
  const fs::path dir = scratch_dir("single");
  cfg.output_dir = dir.string();
  write_outputs(cfg, run_experiment(cfg));
  EXPECT_TRUE(fs::exists(dir / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  EXPECT_FALSE(fs::exists(dir / "trajectory.svg"));
  const ExperimentConfig back = load_config((dir / "config.json").string());
  EXPECT_EQ(to_json(back).dump(), to_json(cfg).dump());
  fs::remove_all(dir);
}

TEST(Output, SvgHasOnePanelPerStateComponent) {
  ExperimentConfig cfg = small_config();
  cfg.n_steps = 10;
  const RunResult run = run_experiment(cfg).front();
  std::ostringstream os;
  write_trajectory_svg(os, run.trajectory, run.targets);
  const std::string svg = os.str();
  auto count = [&](const std::string& needle) {
    std::size_t c = 0;
    for (std::size_t p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++c;
    return c;
  };
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_EQ(count("<polyline"), 2u * cfg.n);
  EXPECT_EQ(count("fill=\"steelblue\""), 2u * cfg.n);  // initial states, filled
  EXPECT_EQ(count("fill=\"none\" stroke=\"firebrick\""), 2u * cfg.n);  // targets, open
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(CostFile, ParsesSquareMatrices) {
  const fs::path dir = scratch_dir("cost");
  fs::create_directories(dir);
  std::ofstream(dir / "c.csv") << "0, 1.5,2\n\n3,4,5e-1\r\n6,7,8\n";
  Matrix expected(3, 3);
  expected << 0, 1.5, 2, 3, 4, 0.5, 6, 7, 8;
  EXPECT_EQ(read_cost_csv((dir / "c.csv").string()), expected);

  std::ofstream(dir / "rect.csv") << "1,2,3\n4,5,6\n";
  EXPECT_THROW(read_cost_csv((dir / "rect.csv").string()), ConfigError);
  std::ofstream(dir / "neg.csv") << "1,-2\n3,4\n";
  EXPECT_THROW(read_cost_csv((dir / "neg.csv").string()), ConfigError);
  std::ofstream(dir / "text.csv") << "1,x\n3,4\n";
  EXPECT_THROW(read_cost_csv((dir / "text.csv").string()), ConfigError);
  EXPECT_THROW(read_cost_csv((dir / "missing.csv").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(CostFile, AssignmentOfAWrittenFileMatchesExhaustiveSearch) {
  const fs::path dir = scratch_dir("assign");
  fs::create_directories(dir);
  std::mt19937_64 rng(11);
  const Matrix C = oracle::random_matrix(7, 7, rng, 0.0, 10.0);
  {
    std::ofstream os(dir / "c.csv");
    write_matrix_csv(os, C);
  }
  const Matrix back = read_cost_csv((dir / "c.csv").string());
  EXPECT_EQ(back, C);
  const Assignment a = exact_assignment(back);
  const oracle::BruteAssignment brute = oracle::brute_force_assignment(C);
  EXPECT_EQ(a.sigma, brute.sigma);
  EXPECT_NEAR(a.cost, brute.cost, 1e-12);
  fs::remove_all(dir);
}

TEST(Format, SeventeenSignificantDigitsRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int k = 0; k < 1000; ++k) {
    const double v = u(rng) / 7.0;
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}
