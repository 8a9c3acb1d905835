#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "smpc/errors.hpp"
#include "smpc/lti_core.hpp"

using namespace smpc;

namespace {

ContinuousAgent double_integrator() {
  Matrix A(2, 2);
  A << 0, 1, 0, 0;
  Matrix B(2, 1);
  B << 0, 1;
  return {A, B};
}

// Random pair that is controllable with a comfortable margin.
ContinuousAgent random_controllable(int n, int m, std::mt19937_64& rng) {
  while (true) {
    ContinuousAgent agent(oracle::random_matrix(n, n, rng), oracle::random_matrix(n, m, rng));
    Matrix ctrb(n, n * m);
    Matrix block = agent.B;
    for (int k = 0; k < n; ++k) {
      ctrb.middleCols(k * m, m) = block;
      block = agent.A * block;
    }
    Eigen::JacobiSVD<Matrix> svd(ctrb);
    if (svd.singularValues()(n - 1) > 1e-2) return agent;
  }
}

double max_rel(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(MatrixExponential, ZeroIsIdentity) {
  EXPECT_EQ(matrix_exponential(Matrix::Zero(2, 2)), Matrix::Identity(2, 2));
}

TEST(MatrixExponential, NilpotentSeriesTerminates) {
  const double t = 0.37;
  Matrix M(2, 2);
  M << 0, t, 0, 0;
  Matrix expected(2, 2);
  expected << 1, t, 0, 1;
  EXPECT_LT((matrix_exponential(M) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MatrixExponential, MatchesTaylorOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix M = oracle::random_matrix(3, 3, rng);
    M /= M.norm();  // ||M|| <= 1
    EXPECT_LT(max_rel(matrix_exponential(M), oracle::taylor_expm(M)), 1e-12);
  }
}

TEST(MatrixExponential, LargeNormAgainstSquaredTaylor) {
  // ||M|| = 10: Taylor on M/1024 squared ten times.
  std::mt19937_64 rng(12);
  Matrix M = oracle::random_matrix(3, 3, rng);
  M *= 10.0 / M.norm();
  Matrix ref = oracle::taylor_expm(M / 1024.0);
  for (int k = 0; k < 10; ++k) ref = ref * ref;
  EXPECT_LT(max_rel(matrix_exponential(M), ref), 1e-12);
}

TEST(MatrixExponential, RejectsNonFinite) {
  Matrix M = Matrix::Zero(2, 2);
  M(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(matrix_exponential(M), InvalidArgument);
}

TEST(ZohDiscretize, DoubleIntegratorSampledAt20ms) {
  const DiscreteAgent d = zoh_discretize(double_integrator(), 0.02);
  Matrix A(2, 2);
  A << 1, 0.02, 0, 1;
  Matrix B(2, 1);
  B << 0.0002, 0.02;
  EXPECT_LT((d.A - A).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((d.B - B).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(d.h, 0.02);
}

TEST(ZohDiscretize, ZeroDrift) {
  std::mt19937_64 rng(3);
  const Matrix B = oracle::random_matrix(3, 2, rng);
  const DiscreteAgent d = zoh_discretize(ContinuousAgent(Matrix::Zero(3, 3), B), 0.25);
  EXPECT_LT((d.A - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((d.B - 0.25 * B).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ZohDiscretize, MatchesQuadratureOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix A = oracle::random_matrix(3, 3, rng);
    // Shift to make A stable.
    Eigen::EigenSolver<Matrix> eig(A, false);
    A -= (eig.eigenvalues().real().maxCoeff() + 0.5) * Matrix::Identity(3, 3);
    const Matrix B = oracle::random_matrix(3, 1, rng);
    const DiscreteAgent d = zoh_discretize(ContinuousAgent(A, B), 0.1);
    EXPECT_LT((d.B - oracle::zoh_input_quadrature(A, B, 0.1)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((d.A - oracle::taylor_expm(A * 0.1)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ZohDiscretize, DoublingThePeriodSquaresA) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const ContinuousAgent c(oracle::random_matrix(3, 3, rng), oracle::random_matrix(3, 1, rng));
    const Matrix a1 = zoh_discretize(c, 0.05).A;
    const Matrix a2 = zoh_discretize(c, 0.1).A;
    EXPECT_LT(max_rel(a2, a1 * a1), 1e-12);
  }
}

TEST(ZohDiscretize, RejectsNonPositivePeriod) {
  EXPECT_THROW(zoh_discretize(double_integrator(), 0.0), InvalidArgument);
  EXPECT_THROW(zoh_discretize(double_integrator(), -1.0), InvalidArgument);
}

TEST(ContinuousGramian, DoubleIntegratorUnitHorizon) {
  const AgentGains g = continuous_gramian(double_integrator(), 1.0);
  Matrix W(2, 2);
  W << 1.0 / 3.0, -0.5, -0.5, 1.0;
  Matrix G(2, 2);
  G << 12, 6, 6, 4;
  Matrix Acl(2, 2);
  Acl << 0, 1, -6, -4;
  EXPECT_LT((g.W - W).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.G_weight - G).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((g.A_cl - Acl).cwiseAbs().maxCoeff(), 1e-9);

  Eigen::EigenSolver<Matrix> eig(g.A_cl, false);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(eig.eigenvalues()(k).real(), -2.0, 1e-9);
    EXPECT_NEAR(std::abs(eig.eigenvalues()(k).imag()), std::sqrt(2.0), 1e-9);
  }
  EXPECT_LT((g.W - oracle::continuous_gramian_quadrature(double_integrator().A,
                                                         double_integrator().B, 1.0))
                .cwiseAbs()
                .maxCoeff(),
            1e-10);
}

TEST(ContinuousGramian, ScalarClosedForm) {
  const ContinuousAgent scalar(Matrix::Constant(1, 1, -1.0), Matrix::Constant(1, 1, 1.0));
  const AgentGains g = continuous_gramian(scalar, 1.0);
  EXPECT_NEAR(g.W(0, 0), (std::exp(2.0) - 1.0) / 2.0, 1e-13);
  EXPECT_NEAR(g.exp_neg_AT(0, 0), std::exp(1.0), 1e-13);
}

TEST(ContinuousGramian, UncontrollablePairIsRejected) {
  Matrix B(2, 1);
  B << 1, 0;
  EXPECT_THROW(continuous_gramian(ContinuousAgent(Matrix::Identity(2, 2), B), 1.0),
               NearSingularGramian);
}

TEST(ContinuousGramian, LyapunovIdentityAndHurwitzOnRandomPairs) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial % 3;
    const int m = 1 + trial % 2;
    const ContinuousAgent agent = random_controllable(n, m, rng);
    const AgentGains g = continuous_gramian(agent, 1.0);
    const Matrix eb = g.exp_neg_AT.transpose() * agent.B;
    const Matrix rhs = -eb * eb.transpose() - agent.B * agent.B.transpose();
    const Matrix lhs = g.A_cl * g.W + g.W * g.A_cl.transpose();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, rhs.norm()));
    EXPECT_LT((g.W * g.G_weight - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-8);
    Eigen::EigenSolver<Matrix> eig(g.A_cl, false);
    EXPECT_LT(eig.eigenvalues().real().maxCoeff(), 0.0);
  }
}

TEST(ReachabilityGramian, TwoStepClosedForm) {
  const double h = 0.1;
  Matrix A(2, 2);
  A << 1, h, 0, 1;
  Matrix B(2, 1);
  B << h * h / 2, h;
  const AgentGains g = reachability_gramian(DiscreteAgent(A, B, h), 2);
  Matrix G(2, 2);
  G << 2.5 * std::pow(h, 4), 2 * std::pow(h, 3), 2 * std::pow(h, 3), 2 * h * h;
  EXPECT_LT(max_rel(g.W, G), 1e-14);
}

TEST(ReachabilityGramian, IdentityPowers) {
  const AgentGains g =
      reachability_gramian(DiscreteAgent(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0), 3);
  EXPECT_LT((g.W - 3.0 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((g.G_weight - Matrix::Identity(2, 2) / 3.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ReachabilityGramian, SampledDoubleIntegratorHorizon50) {
  const DiscreteAgent d = zoh_discretize(double_integrator(), 0.02);
  const AgentGains g = reachability_gramian(d, 50);
  EXPECT_LT(max_rel(g.W, oracle::reachability_gramian_sum(d.A, d.B, 50)), 1e-10);
  EXPECT_LT(g.rho, 1.0);
  EXPECT_EQ(g.A_cl, d.A - d.B * g.feedback);
}

TEST(ReachabilityGramian, HorizonBelowReachabilityIndex) {
  const DiscreteAgent d = zoh_discretize(double_integrator(), 0.02);
  EXPECT_THROW(reachability_gramian(d, 1), NearSingularGramian);
  EXPECT_THROW(reachability_gramian(d, 0), InvalidArgument);
}

TEST(ReachabilityGramian, ClosedLoopStableOnRandomReachablePairs) {
  std::mt19937_64 rng(31);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + trial % 3;
    const DiscreteAgent d(oracle::random_matrix(n, n, rng, -0.8, 0.8),
                          oracle::random_matrix(n, 1 + trial % 2, rng), 1.0);
    try {
      const AgentGains g = reachability_gramian(d, n + 3);
      EXPECT_LT(g.rho, 1.0);
      ++checked;
    } catch (const NearSingularGramian&) {
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(EquilibriumInput, DoubleIntegratorRestingTargets) {
  Vector x(2);
  x << 3.5, 0.0;
  EXPECT_EQ(equilibrium_input(double_integrator(), x).norm(), 0.0);
  const DiscreteAgent d = zoh_discretize(double_integrator(), 0.02);
  EXPECT_LT(equilibrium_input(d, x).norm(), 1e-12);
}

TEST(EquilibriumInput, InvertibleB) {
  std::mt19937_64 rng(41);
  const ContinuousAgent c(oracle::random_matrix(3, 3, rng), oracle::random_matrix(3, 3, rng));
  const Vector x = oracle::random_matrix(3, 1, rng);
  const Vector expected = -c.B.inverse() * c.A * x;
  EXPECT_LT((equilibrium_input(c, x) - expected).norm(), 1e-10);
}

TEST(EquilibriumInput, MovingTargetIsInfeasible) {
  Vector x(2);
  x << 0.0, 1.0;
  EXPECT_THROW(equilibrium_input(double_integrator(), x), InfeasibleTarget);
}

TEST(EquilibriumInput, MinimumNormHasNoNullSpaceComponent) {
  // Two identical input channels: null space of B is span([1, -1]).
  Matrix A(2, 2);
  A << 0, 1, 0, -0.5;
  Matrix B(2, 2);
  B << 0, 0, 1, 1;
  Vector x(2);
  x << 2.0, 0.0;
  Vector xv(2);
  xv << 0.0, 0.0;
  const ContinuousAgent c(A, B);
  const Vector u = equilibrium_input(c, x);
  Vector null_dir(2);
  null_dir << 1, -1;
  EXPECT_NEAR(u.dot(null_dir), 0.0, 1e-14);
  EXPECT_LT((A * x + B * u).norm(), 1e-12);
}

TEST(SpectralRadius, Basics) {
  EXPECT_NEAR(spectral_radius(Matrix::Identity(2, 2)), 1.0, 1e-15);
  Matrix nil(2, 2);
  nil << 0, 1, 0, 0;
  EXPECT_EQ(spectral_radius(nil), 0.0);
}

TEST(SpectralRadius, SampledClosedLoopAgainstGelfand) {
  const DiscreteAgent d = zoh_discretize(double_integrator(), 0.02);
  const AgentGains g = reachability_gramian(d, 50);
  EXPECT_NEAR(spectral_radius(g.A_cl), oracle::spectral_radius_gelfand(g.A_cl), 1e-8);
}

TEST(KappaBound, NormalMatrixGivesOne) {
  EXPECT_DOUBLE_EQ(kappa_bound(0.5 * Matrix::Identity(2, 2), 0.1), 1.0);
}

TEST(KappaBound, JordanLikeMatchesBruteForceScan) {
  Matrix A(2, 2);
  A << 0.5, 10, 0, 0.5;
  const double kappa = kappa_bound(A, 0.2);
  EXPECT_NEAR(kappa, oracle::kappa_scan(A, 0.7), 1e-12 * kappa);
  EXPECT_GT(kappa, 1.0);
}

TEST(KappaBound, RejectsRateAtOrAboveOne) {
  EXPECT_THROW(kappa_bound(0.9 * Matrix::Identity(2, 2), 0.1), InvalidArgument);
  EXPECT_THROW(kappa_bound(0.5 * Matrix::Identity(2, 2), 0.0), InvalidArgument);
}

TEST(KappaBound, TableHoldsRequestedRates) {
  const AgentGains g = reachability_gramian(zoh_discretize(double_integrator(), 0.02), 50);
  const double nus[] = {(1.0 - g.rho) / 2.0, (1.0 - g.rho) / 4.0};
  const AgentGains with = with_kappa(g, nus);
  ASSERT_EQ(with.kappa_table.size(), 2u);
  for (double nu : nus) EXPECT_EQ(with.kappa_table.at(nu), kappa_bound(g.A_cl, nu));
}

TEST(TargetSet, MinimumNormTableAndRadius) {
  const std::vector<ContinuousAgent> agents(3, double_integrator());
  Matrix pts(2, 3);
  pts << -1, 0.5, 4, 0, 0, 0;
  const TargetSet set = make_target_set(std::span<const ContinuousAgent>(agents), pts);
  EXPECT_DOUBLE_EQ(set.rbar, 4.0);
  for (const Matrix& table : set.ubar) EXPECT_EQ(table.norm(), 0.0);
}

TEST(TargetSet, RejectsInfeasibleSuppliedTable) {
  const std::vector<ContinuousAgent> agents(2, double_integrator());
  Matrix pts(2, 2);
  pts << 1, 2, 0, 0;
  std::vector<Matrix> bad(2, Matrix::Ones(1, 2));
  EXPECT_THROW(make_target_set(std::span<const ContinuousAgent>(agents), pts, bad),
               InfeasibleTarget);
}
