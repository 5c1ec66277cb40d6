#pragma once

#include "stmpc/nlp.hpp"

#include <iosfwd>
#include <string>

namespace stmpc {

enum class SolveStatus { Converged, MaxIterations, InfeasibleDetected, NumericalFailure };

std::string to_string(SolveStatus s);

struct WarmStart {
  Vector lambda_eq;
  Vector lambda_ineq;
  Vector lambda_lb;
  Vector lambda_ub;
};

struct SolveOptions {
  int max_iterations = 200;
  double kkt_tol = 1e-6;         ///< stationarity + complementarity
  double constraint_tol = 1e-8;  ///< primal feasibility
  bool fd_derivatives = false;   ///< finite-difference Jacobians instead of analytic
  double fd_step = 1e-7;
  double penalty_init = 10.0;
  double penalty_margin = 1.5;   ///< keep nu >= margin * ||multipliers||_inf
  double regularization_floor = 1e-10;
  double max_step = 1e3;         ///< cap on ||alpha d||_inf per iteration
  std::ostream* log = nullptr;   ///< optional line-delimited iteration log
  /// Multiplier warm start (ignored unless the sizes match the problem).
  const WarmStart* warm = nullptr;
};

struct KktResiduals {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
};

struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  Vector z;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double constraint_residual = 0.0;
  int iterations = 0;
  Vector lambda_eq;
  Vector lambda_ineq;
  Vector lambda_lb;
  Vector lambda_ub;
  std::string message;
};

/// Sequential quadratic programming in the equality null space: exact
/// Lagrangian-Hessian steps when the problem provides them (reduced-space
/// damped BFGS otherwise), an elastic primal active-set QP subproblem, l1
/// merit line search with watchdog and second-order correction, and a
/// Newton polish on the identified active set. Deterministic: identical
/// inputs produce identical iterates.
SolveResult solve(const NlpProblem& problem, const Vector& z0, const SolveOptions& opts = {});

/// Worst relative error between analytic derivatives and central finite
/// differences at z (objective gradient and both Jacobians).
double check_derivatives(const NlpProblem& problem, const Vector& z, double scale = 1e-5);

/// Independent KKT certificate at (z, multipliers); recomputed from problem
/// evaluations only, no solver state.
KktResiduals verify_kkt(const NlpProblem& problem, const Vector& z, const Vector& lambda_eq,
                        const Vector& lambda_ineq, const Vector& lambda_lb,
                        const Vector& lambda_ub);

}  // namespace stmpc
