#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace smpc {

/// Bad caller input: non-finite matrices, non-positive periods, rho + nu >= 1, ...
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for failures that originate in the numerics rather than in the input shape.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gramian too ill-conditioned to invert (uncontrollable or degenerate pair).
class NearSingularGramian : public NumericError {
 public:
  NearSingularGramian(const std::string& what, double condition)
      : NumericError(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// No constant input makes the target an equilibrium.
class InfeasibleTarget : public NumericError {
 public:
  InfeasibleTarget(const std::string& what, double residual)
      : NumericError(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Linear-domain Sinkhorn produced inf/nan; retry in log domain.
class NumericRange : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonConvergence : public NumericError {
 public:
  NonConvergence(const std::string& what, double violation, std::size_t iterations)
      : NumericError(what), violation_(violation), iterations_(iterations) {}
  double violation() const noexcept { return violation_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double violation_;
  std::size_t iterations_;
};

/// Closed-loop state left the guard ball; indicates a bug, never expected.
class Divergence : public NumericError {
 public:
  Divergence(const std::string& what, std::size_t step) : NumericError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace smpc
