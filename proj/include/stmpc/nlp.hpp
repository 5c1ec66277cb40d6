#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>

namespace stmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Affine parametrization of {d : JE d = -cE}: d = particular + Z y.
/// `multipliers` solves JE' lambda = rhs (least-squares when JE is rank
/// deficient) for multiplier recovery.
struct EqElimination {
  Matrix Z;
  Vector particular;
  std::function<Vector(const Vector&)> multipliers;
  /// Maps rhs to some d with JE d = rhs (second-order corrections).
  std::function<Vector(const Vector&)> primal;
};

/// Smooth nonlinear program
///   min f(z)  s.t.  cE(z) = 0,  cI(z) <= 0,  lb <= z <= ub.
/// Evaluators must be deterministic functions of z.
class NlpProblem {
public:
  virtual ~NlpProblem() = default;

  virtual int dim() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const = 0;

  virtual double objective(const Vector& z) const = 0;
  virtual Vector objective_gradient(const Vector& z) const;

  /// c gets num_eq entries; if J is non-null it gets num_eq x dim.
  virtual void equalities(const Vector& z, Vector& c, Matrix* J) const = 0;
  virtual void inequalities(const Vector& z, Vector& c, Matrix* J) const = 0;

  virtual void variable_bounds(Vector& lb, Vector& ub) const;

  /// Structured equality elimination; return false for the dense fallback.
  virtual bool eliminate(const Matrix& JE, const Vector& cE, EqElimination& out) const;

  /// Exact objective Hessian when cheaply available (seeds the solver's
  /// quasi-Newton matrix); return false to start from identity.
  virtual bool objective_hessian(const Vector& z, Matrix& H) const;

  /// Exact Hessian of the Lagrangian f + lamE'cE + lamI'cI. Problems that
  /// provide it are solved by Newton SQP instead of quasi-Newton updates.
  virtual bool lagrangian_hessian(const Vector& z, const Vector& lambda_eq,
                                  const Vector& lambda_ineq, Matrix& H) const;
};

/// Dense rank-revealing elimination (ColPiv QR of JE'). Used as fallback and
/// directly by problems without structure.
EqElimination dense_eliminate(const Matrix& JE, const Vector& cE);

/// Central-difference helpers (derivative mode and the derivative checker).
Vector fd_objective_gradient(const NlpProblem& p, const Vector& z, double step);
Matrix fd_equality_jacobian(const NlpProblem& p, const Vector& z, double step);
Matrix fd_inequality_jacobian(const NlpProblem& p, const Vector& z, double step);

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

}  // namespace stmpc
