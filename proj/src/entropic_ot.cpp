#include "smpc/entropic_ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include <Eigen/Cholesky>

#include "smpc/errors.hpp"

namespace smpc {

namespace {

void require_cost(const Matrix& cost) {
  if (cost.rows() < 1 || cost.rows() != cost.cols()) {
    throw InvalidArgument("cost matrix must be square and non-empty");
  }
  if (!cost.allFinite()) throw InvalidArgument("cost matrix has non-finite entries");
  if ((cost.array() < 0.0).any()) throw InvalidArgument("cost matrix has negative entries");
}

double log_mass(Eigen::Index n) { return -std::log(static_cast<double>(n)); }

// log(1/N) - log sum_i K_ij alpha_i, as max-shifted log-sum-exp reductions.
Vector log_beta_update(const Matrix& log_k, const Vector& log_alpha) {
  Matrix m = log_k.colwise() + log_alpha;
  const Eigen::RowVectorXd top = m.colwise().maxCoeff();
  m.rowwise() -= top;
  const Eigen::RowVectorXd sums = m.array().exp().colwise().sum();
  return (log_mass(log_k.rows()) - (top.array() + sums.array().log())).transpose();
}

// log(1/N) - log sum_j K_ij beta_j
Vector log_alpha_update(const Matrix& log_k, const Vector& log_beta) {
  Matrix m = log_k.rowwise() + log_beta.transpose();
  const Vector top = m.rowwise().maxCoeff();
  m.colwise() -= top;
  const Vector sums = m.array().exp().rowwise().sum();
  return (log_mass(log_k.rows()) - (top.array() + sums.array().log())).matrix();
}

// Sinkhorn iterations on alpha = e^a u, beta = e^b v with the stabilized
// kernel Kt_ij = K_ij e^{a_i + b_j}; the updates themselves are plain
// matrix-vector products. In log mode, a scaling that leaves [1e-100, 1e100]
// is recomputed with log-sum-exp and folded into (a, b), and Kt is rebuilt.
// In linear mode a = b = 0 and leaving the floating-point range is an error.
class Scaler {
 public:
  Scaler(const GibbsKernel& kernel, const Vector& log_alpha)
      : kernel_(kernel),
        mass_(1.0 / static_cast<double>(kernel.size())),
        u_(Vector::Ones(kernel.size())),
        v_(Vector::Ones(kernel.size())) {
    if (stabilized()) {
      a_ = log_alpha;
      b_ = -(kernel.log_kernel().colwise() + a_).colwise().maxCoeff().transpose();
      rebuild();
    } else {
      u_ = log_alpha.array().exp();
      if (!(u_.array() > 0.0).all() || !u_.allFinite()) out_of_range();
    }
  }

  /// Column sums of the current coupling; the product K^T alpha is kept for
  /// the next beta update.
  Vector column_sums() {
    w_ = k().transpose() * u_;
    w_valid_ = true;
    return v_.cwiseProduct(w_);
  }

  /// beta <- (1/N) / (K^T alpha)
  void update_beta() {
    if (!w_valid_) w_ = k().transpose() * u_;
    w_valid_ = false;
    Vector v_new = mass_ / w_.array();
    if (usable(v_new)) {
      v_ = std::move(v_new);
      return;
    }
    if (!stabilized()) out_of_range();
    const Vector la = a_ + u_.array().log().matrix();
    refold(la, log_beta_update(kernel_.log_kernel(), la));
  }

  /// alpha <- (1/N) / (K beta); afterwards the coupling rows are exact.
  void update_alpha() {
    w_valid_ = false;
    Vector u_new = mass_ / (k() * v_).array();
    if (usable(u_new)) {
      u_ = std::move(u_new);
      return;
    }
    if (!stabilized()) out_of_range();
    const Vector lb = b_ + v_.array().log().matrix();
    refold(log_alpha_update(kernel_.log_kernel(), lb), lb);
  }

  /// Projective representative with max(alpha) = 1.
  ScalingState scalings() const {
    ScalingState s;
    s.log_alpha = u_.array().log();
    s.log_beta = v_.array().log();
    if (stabilized()) {
      s.log_alpha += a_;
      s.log_beta += b_;
    }
    const double c = s.log_alpha.maxCoeff();
    s.log_alpha.array() -= c;
    s.log_beta.array() += c;
    return s;
  }

  Matrix coupling() const { return u_.asDiagonal() * k() * v_.asDiagonal(); }

 private:
  bool stabilized() const { return kernel_.domain() == Domain::log; }
  const Matrix& k() const { return stabilized() ? kt_ : kernel_.kernel(); }

  bool usable(const Vector& x) const {
    if (!x.allFinite()) return false;
    if (!stabilized()) return (x.array() > 0.0).all();
    return x.minCoeff() >= 1e-100 && x.maxCoeff() <= 1e100;
  }

  void refold(const Vector& log_alpha, const Vector& log_beta) {
    a_ = log_alpha;
    b_ = log_beta;
    u_.setOnes();
    v_.setOnes();
    rebuild();
  }

  void rebuild() {
    kt_ = ((kernel_.log_kernel().colwise() + a_).rowwise() + b_.transpose()).array().exp();
  }

  [[noreturn]] static void out_of_range() {
    throw NumericRange("linear-domain Sinkhorn step left the floating-point range");
  }

  const GibbsKernel& kernel_;
  double mass_;
  Vector a_, b_;
  Matrix kt_;
  Vector u_, v_;
  Vector w_;
  bool w_valid_ = false;
};

void require_scaling(const Vector& log_alpha, Eigen::Index n) {
  if (log_alpha.size() != n) throw InvalidArgument("scaling vector has wrong length");
  if (!log_alpha.allFinite()) throw InvalidArgument("scaling vector must be positive and finite");
}

}  // namespace

GibbsKernel::GibbsKernel(const Matrix& cost, double epsilon, Domain domain)
    : epsilon_(epsilon), domain_(domain) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument("epsilon must be > 0");
  }
  require_cost(cost);
  log_k_ = -cost / epsilon;
  if (domain == Domain::linear) k_ = log_k_.unaryExpr([](double v) { return std::exp(v); });
}

GibbsKernel gibbs_kernel(const Matrix& cost, double epsilon, Domain domain) {
  return GibbsKernel(cost, epsilon, domain);
}

ScalingState sinkhorn_step(const GibbsKernel& kernel, const Vector& log_alpha) {
  require_scaling(log_alpha, kernel.size());
  Scaler scaler(kernel, log_alpha);
  scaler.update_beta();
  scaler.update_alpha();
  return scaler.scalings();
}

Matrix coupling_from_scalings(const GibbsKernel& kernel, const ScalingState& scalings) {
  const Eigen::Index n = kernel.size();
  if (scalings.log_alpha.size() != n || scalings.log_beta.size() != n) {
    throw InvalidArgument("scaling vectors have wrong length");
  }
  Matrix log_p = kernel.log_kernel();
  log_p.colwise() += scalings.log_alpha;
  log_p.rowwise() += scalings.log_beta.transpose();
  return log_p.array().exp();
}

double marginal_violation(const Matrix& coupling) {
  const double mass = 1.0 / static_cast<double>(coupling.rows());
  return (coupling.rowwise().sum().array() - mass).abs().sum() +
         (coupling.colwise().sum().array() - mass).abs().sum();
}

namespace {

struct Attempt {
  std::optional<SinkhornResult> result;
  ScalingState last;  // final iterate when there is no result
  double violation = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
};

Attempt iterate(const GibbsKernel& kernel, const Vector& log_alpha0, double tol,
                std::size_t budget) {
  const double mass = 1.0 / static_cast<double>(kernel.size());
  Scaler scaler(kernel, log_alpha0);
  scaler.update_beta();
  Attempt a;
  for (std::size_t it = 1; it <= budget; ++it) {
    scaler.update_alpha();
    a.iterations = it;
    // Rows are exact after the alpha update, so only the columns are checked
    // here; the full marginal test confirms before returning.
    a.violation = (scaler.column_sums().array() - mass).abs().sum();
    if (a.violation < tol) {
      Matrix coupling = scaler.coupling();
      const double exact = marginal_violation(coupling);
      if (exact < tol) {
        SinkhornResult result;
        result.scalings = scaler.scalings();
        result.coupling = std::move(coupling);
        result.iterations = it;
        result.violation = exact;
        a.result = std::move(result);
        return a;
      }
    }
    scaler.update_beta();
  }
  a.last = scaler.scalings();
  return a;
}

Matrix log_domain_coupling(const Matrix& log_k, const Vector& u, const Vector& v) {
  return ((log_k.colwise() + u).rowwise() + v.transpose()).array().exp().matrix();
}

constexpr std::size_t kNewtonSteps = 100;
// Dense Newton systems are skipped above this size.
constexpr Eigen::Index kNewtonMaxSize = 400;

// Damped Newton ascent on the concave dual  mass (sum u + sum v) - sum_ij P_ij,
// P = exp(log K + u 1^T + 1 v^T), with v_N pinned to remove the (u + c, v - c)
// direction. Each candidate is finished by an exact alpha update, as a
// Sinkhorn sweep would be, before the marginal test.
Attempt newton_polish(const GibbsKernel& kernel, const ScalingState& start, double tol) {
  const Matrix& log_k = kernel.log_kernel();
  const Eigen::Index N = kernel.size();
  const double mass = 1.0 / static_cast<double>(N);
  Vector u = start.log_alpha;
  Vector v = start.log_beta;
  Matrix P = log_domain_coupling(log_k, u, v);
  const auto dual = [&](const Vector& uu, const Vector& vv, const Matrix& PP) {
    return mass * (uu.sum() + vv.sum()) - PP.sum();
  };
  double phi = dual(u, v, P);
  Attempt a;
  for (std::size_t step = 1; step <= kNewtonSteps; ++step) {
    a.iterations = step;
    const Vector r = P.rowwise().sum();
    const Vector c = P.colwise().sum().transpose();

    const Vector u_fin = u.array() + (mass / r.array()).log();
    Matrix fin = log_domain_coupling(log_k, u_fin, v);
    a.violation = marginal_violation(fin);
    if (a.violation < tol) {
      const double shift = u_fin.maxCoeff();
      SinkhornResult result;
      result.scalings.log_alpha = u_fin.array() - shift;
      result.scalings.log_beta = v.array() + shift;
      result.coupling = std::move(fin);
      result.iterations = step;
      result.violation = a.violation;
      a.result = std::move(result);
      return a;
    }

    const Eigen::Index M = 2 * N - 1;
    Matrix H = Matrix::Zero(M, M);
    H.topLeftCorner(N, N).diagonal() = r;
    H.topRightCorner(N, N - 1) = P.leftCols(N - 1);
    H.bottomLeftCorner(N - 1, N) = P.leftCols(N - 1).transpose();
    H.bottomRightCorner(N - 1, N - 1).diagonal() = c.head(N - 1);
    Vector g(M);
    g.head(N) = mass - r.array();
    g.tail(N - 1) = mass - c.head(N - 1).array();
    const Vector d = H.ldlt().solve(g);
    if (!d.allFinite()) break;

    const double slope = g.dot(d);
    bool accepted = false;
    for (double t = 1.0; t > 1e-10; t *= 0.5) {
      Vector u_t = u + t * d.head(N);
      Vector v_t = v;
      v_t.head(N - 1) += t * d.tail(N - 1);
      Matrix P_t = log_domain_coupling(log_k, u_t, v_t);
      const double phi_t = dual(u_t, v_t, P_t);
      // Armijo with a rounding allowance; near the optimum phi is flat to
      // machine precision while the step is still productive.
      if (std::isfinite(phi_t) &&
          phi_t >= phi + 1e-4 * t * slope - 1e-14 * (1.0 + std::abs(phi))) {
        u = std::move(u_t);
        v = std::move(v_t);
        P = std::move(P_t);
        phi = phi_t;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  a.last.log_alpha = u;
  a.last.log_beta = v;
  return a;
}

// At most `plain_cap` plain sweeps, then Newton from wherever they stalled.
Attempt solve_stage(const GibbsKernel& kernel, const Vector& log_alpha0, double tol,
                    std::size_t budget, std::size_t plain_cap) {
  Attempt a = iterate(kernel, log_alpha0, tol, std::min(budget, plain_cap));
  if (a.result || kernel.size() > kNewtonMaxSize || a.iterations >= budget) return a;
  Attempt b = newton_polish(kernel, a.last, tol);
  b.iterations += a.iterations;
  if (b.result) b.result->iterations = b.iterations;
  return b;
}

// Annealing starts where the log-kernel spans at most this many units.
constexpr double kMaxLogRange = 50.0;
// Marginal tolerance of the intermediate annealing stages.
constexpr double kStageTol = 1e-5;

}  // namespace

SinkhornResult sinkhorn_solve(const GibbsKernel& kernel, const Vector& log_alpha0,
                              const SinkhornOptions& options) {
  if (!(options.tol > 0.0)) throw InvalidArgument("Sinkhorn tolerance must be > 0");
  require_scaling(log_alpha0, kernel.size());
  if (!options.stall_fallback || kernel.domain() == Domain::linear) {
    Attempt a = iterate(kernel, log_alpha0, options.tol, options.max_iter);
    if (a.result) return std::move(*a.result);
    throw NonConvergence("Sinkhorn did not reach tolerance (violation " +
                             std::to_string(a.violation) + ")",
                         a.violation, a.iterations);
  }

  Attempt a =
      solve_stage(kernel, log_alpha0, options.tol, options.max_iter, options.plain_budget);
  std::size_t used = a.iterations;
  if (a.result) return std::move(*a.result);

  // Each sweep moves the dual potentials by about the marginal error, so
  // potentials that must travel ~C/eps stall. Solve along ..., 4 eps, 2 eps,
  // eps from the coarsest level down, each stage warm-starting the next.
  const double eps = kernel.epsilon();
  const double log_range = kernel.log_kernel().maxCoeff() - kernel.log_kernel().minCoeff();
  int levels = 0;
  while (log_range / std::ldexp(1.0, levels) > kMaxLogRange) ++levels;
  Vector potential = eps * log_alpha0;
  // Without Newton steps the stages are plain Sinkhorn and get the whole budget.
  const std::size_t cap = kernel.size() > kNewtonMaxSize ? options.max_iter : options.plain_budget;
  for (int level = levels; level >= 1 && used < options.max_iter; --level) {
    const double stage_eps = std::ldexp(eps, level);
    Attempt stage = solve_stage(GibbsKernel(-eps * kernel.log_kernel(), stage_eps),
                                potential / stage_eps, std::max(options.tol, kStageTol),
                                options.max_iter - used, cap);
    used += stage.iterations;
    if (!stage.result) break;
    potential = stage_eps * stage.result->scalings.log_alpha;
    if (level == 1) {
      Attempt last =
          solve_stage(kernel, potential / eps, options.tol, options.max_iter - used, cap);
      used += last.iterations;
      if (last.result) {
        last.result->iterations = used;
        return std::move(*last.result);
      }
      a.violation = last.violation;
    }
  }
  throw NonConvergence("Sinkhorn did not reach tolerance (violation " +
                           std::to_string(a.violation) + ")",
                       a.violation, used);
}

SinkhornResult sinkhorn_partial(const GibbsKernel& kernel, const Vector& log_alpha_in,
                                int steps) {
  if (steps < 1) throw InvalidArgument("number of Sinkhorn iterations must be >= 1");
  require_scaling(log_alpha_in, kernel.size());
  Scaler scaler(kernel, log_alpha_in);
  for (int l = 0; l < steps; ++l) {
    scaler.update_beta();
    scaler.update_alpha();
  }
  SinkhornResult result;
  result.scalings = scaler.scalings();
  result.coupling = scaler.coupling();
  result.iterations = static_cast<std::size_t>(steps);
  result.violation = marginal_violation(result.coupling);
  return result;
}

Matrix barycentric_projection(const Matrix& coupling, const Matrix& points) {
  if (coupling.rows() != coupling.cols() || coupling.cols() != points.cols()) {
    throw InvalidArgument("coupling and target set sizes differ");
  }
  return static_cast<double>(coupling.rows()) * points * coupling.transpose();
}

double entropy(const Matrix& coupling) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < coupling.cols(); ++j) {
    for (Eigen::Index i = 0; i < coupling.rows(); ++i) {
      const double p = coupling(i, j);
      if (p > 0.0) h -= p * (std::log(p) - 1.0);
    }
  }
  return h;
}

double entropic_objective(const Matrix& cost, const Matrix& coupling, double epsilon) {
  return cost.cwiseProduct(coupling).sum() - epsilon * entropy(coupling);
}

double entropic_cost(const Matrix& cost, double epsilon, const SinkhornOptions& options) {
  const GibbsKernel kernel(cost, epsilon);
  const SinkhornResult r = sinkhorn_solve(kernel, Vector::Zero(cost.rows()), options);
  return entropic_objective(cost, r.coupling, epsilon);
}

namespace {

// Hungarian method with row/column potentials, O(N^3). Indices are 1-based
// internally; u and v satisfy cost(i, j) - u_i - v_j >= 0 with equality on
// the returned matching.
struct HungarianSolution {
  std::vector<int> row_to_col;
  std::vector<double> u;
  std::vector<double> v;
};

HungarianSolution hungarian(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  HungarianSolution sol;
  sol.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j) sol.row_to_col[owner[j] - 1] = j - 1;
  sol.u.assign(u.begin() + 1, u.end());
  sol.v.assign(v.begin() + 1, v.end());
  return sol;
}

// Rewrites `row_to_col` into the lexicographically smallest perfect matching
// of the tight-edge graph. Every optimal permutation uses only tight edges,
// so the result is the lexicographically smallest optimal assignment.
void lexicographic_refine(const std::vector<std::vector<char>>& tight,
                          std::vector<int>& row_to_col) {
  const int n = static_cast<int>(row_to_col.size());
  std::vector<int> col_to_row(n);
  for (int i = 0; i < n; ++i) col_to_row[row_to_col[i]] = i;

  std::vector<int> parent_col(n);
  std::vector<char> seen(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < row_to_col[i]; ++j) {
      if (!tight[i][j] || col_to_row[j] < i) continue;
      // Give column j to row i; its owner r > i must reach the column row i
      // frees through an alternating path over rows > i.
      const int freed = row_to_col[i];
      const int start = col_to_row[j];
      std::fill(seen.begin(), seen.end(), 0);
      std::vector<int> queue{start};
      std::vector<int> via(n, -1);  // row reached -> column used to reach it
      std::vector<char> row_seen(n, 0);
      row_seen[start] = 1;
      int found_row = -1;
      for (std::size_t q = 0; q < queue.size() && found_row < 0; ++q) {
        const int r = queue[q];
        for (int c = 0; c < n; ++c) {
          if (!tight[r][c] || seen[c] || c == j) continue;
          const int holder = col_to_row[c];
          if (c != freed && holder <= i) continue;
          seen[c] = 1;
          parent_col[c] = r;
          if (c == freed) {
            found_row = r;
            break;
          }
          if (!row_seen[holder]) {
            row_seen[holder] = 1;
            via[holder] = c;
            queue.push_back(holder);
          }
        }
      }
      if (found_row < 0) continue;
      // Augment: walk back from the freed column.
      int c = freed;
      while (true) {
        const int r = parent_col[c];
        const int prev = via[r];
        row_to_col[r] = c;
        col_to_row[c] = r;
        if (r == start) break;
        c = prev;
      }
      row_to_col[i] = j;
      col_to_row[j] = i;
      break;
    }
  }
}

}  // namespace

Assignment exact_assignment(const Matrix& cost) {
  if (cost.rows() < 1 || cost.rows() != cost.cols()) {
    throw InvalidArgument("cost matrix must be square and non-empty");
  }
  if (!cost.allFinite()) throw InvalidArgument("cost matrix has non-finite entries");
  const int n = static_cast<int>(cost.rows());
  HungarianSolution sol = hungarian(cost);

  const double scale = 1.0 + cost.cwiseAbs().maxCoeff();
  const double tol = 1e-10 * scale;
  std::vector<std::vector<char>> tight(n, std::vector<char>(n, 0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      tight[i][j] = cost(i, j) - sol.u[i] - sol.v[j] <= tol;
    }
  }
  lexicographic_refine(tight, sol.row_to_col);

  Assignment a;
  a.sigma = std::move(sol.row_to_col);
  for (int i = 0; i < n; ++i) a.cost += cost(i, a.sigma[i]);
  return a;
}

Matrix permutation_coupling(const std::vector<int>& sigma) {
  const auto n = static_cast<Eigen::Index>(sigma.size());
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, sigma[i]) = 1.0 / static_cast<double>(n);
  return p;
}

}  // namespace smpc
