#include "stmpc/nlp.hpp"

#include <memory>
#include <stdexcept>

namespace stmpc {

Vector NlpProblem::objective_gradient(const Vector& z) const {
  return fd_objective_gradient(*this, z, 1e-7);
}

void NlpProblem::variable_bounds(Vector& lb, Vector& ub) const {
  lb = Vector::Constant(dim(), -kInfinity);
  ub = Vector::Constant(dim(), kInfinity);
}

bool NlpProblem::eliminate(const Matrix&, const Vector&, EqElimination&) const { return false; }

bool NlpProblem::objective_hessian(const Vector&, Matrix&) const { return false; }

bool NlpProblem::lagrangian_hessian(const Vector&, const Vector&, const Vector&,
                                    Matrix&) const {
  return false;
}

EqElimination dense_eliminate(const Matrix& JE, const Vector& cE) {
  const int n = static_cast<int>(JE.cols());
  const int me = static_cast<int>(JE.rows());
  EqElimination out;
  if (me == 0) {
    out.Z = Matrix::Identity(n, n);
    out.particular = Vector::Zero(n);
    out.multipliers = [](const Vector&) { return Vector(); };
    out.primal = [n](const Vector&) { return Vector::Zero(n); };
    return out;
  }

  // JE' = Q R P'; null space = trailing columns of Q, particular solution
  // is the minimum-norm one.
  auto qr = std::make_shared<Eigen::ColPivHouseholderQR<Matrix>>(JE.transpose());
  const int rank = static_cast<int>(qr->rank());
  Matrix Qfull = qr->householderQ();
  out.Z = Qfull.rightCols(n - rank);

  const auto perm = qr->colsPermutation();
  out.primal = [qr, Qfull, rank, me, n, perm](const Vector& rhs) {
    Matrix R = qr->matrixQR().topRows(me).template triangularView<Eigen::Upper>();
    Vector b = perm.transpose() * rhs;
    Vector u = Vector::Zero(n);
    u.head(rank) = R.topLeftCorner(rank, rank)
                       .template triangularView<Eigen::Upper>()
                       .transpose()
                       .solve(b.head(rank));
    return Vector(Qfull * u);
  };
  out.particular = out.primal(-cE);
  out.multipliers = [qr, Qfull, rank, me, perm](const Vector& rhs) {
    Matrix R = qr->matrixQR().topRows(me).template triangularView<Eigen::Upper>();
    Vector qtr = (Qfull.transpose() * rhs).head(rank);
    Vector w = Vector::Zero(me);
    w.head(rank) =
        R.topLeftCorner(rank, rank).template triangularView<Eigen::Upper>().solve(qtr);
    return Vector(perm * w);
  };
  return out;
}

namespace {

Vector eval_eq(const NlpProblem& p, const Vector& z) {
  Vector c(p.num_eq());
  p.equalities(z, c, nullptr);
  return c;
}

Vector eval_ineq(const NlpProblem& p, const Vector& z) {
  Vector c(p.num_ineq());
  p.inequalities(z, c, nullptr);
  return c;
}

}  // namespace

Vector fd_objective_gradient(const NlpProblem& p, const Vector& z, double step) {
  Vector g(p.dim());
  Vector zp = z;
  for (int i = 0; i < p.dim(); ++i) {
    const double h = step * (1.0 + std::abs(z[i]));
    zp[i] = z[i] + h;
    const double fp = p.objective(zp);
    zp[i] = z[i] - h;
    const double fm = p.objective(zp);
    zp[i] = z[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

namespace {

Matrix fd_jacobian(const NlpProblem& p, const Vector& z, double step, bool eq) {
  const int rows = eq ? p.num_eq() : p.num_ineq();
  Matrix J(rows, p.dim());
  Vector zp = z;
  for (int i = 0; i < p.dim(); ++i) {
    const double h = step * (1.0 + std::abs(z[i]));
    zp[i] = z[i] + h;
    Vector cp = eq ? eval_eq(p, zp) : eval_ineq(p, zp);
    zp[i] = z[i] - h;
    Vector cm = eq ? eval_eq(p, zp) : eval_ineq(p, zp);
    zp[i] = z[i];
    J.col(i) = (cp - cm) / (2.0 * h);
  }
  return J;
}

}  // namespace

Matrix fd_equality_jacobian(const NlpProblem& p, const Vector& z, double step) {
  return fd_jacobian(p, z, step, true);
}

Matrix fd_inequality_jacobian(const NlpProblem& p, const Vector& z, double step) {
  return fd_jacobian(p, z, step, false);
}

}  // namespace stmpc
