#include "stmpc/linalg.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <stdexcept>

namespace stmpc {

double min_eigenvalue(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_psd(const Matrix& M, double tol) { return min_eigenvalue(M) >= -tol; }

Matrix psd_factor(const Matrix& M, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M));
  Vector ev = es.eigenvalues();
  if (ev.minCoeff() < -tol) {
    throw std::invalid_argument("psd_factor: matrix is not positive semidefinite");
  }
  Vector s = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal();
}

Matrix project_psd(const Matrix& M, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M));
  if (es.eigenvalues().minCoeff() < -tol) {
    throw std::invalid_argument("project_psd: matrix is too indefinite");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
         es.eigenvectors().transpose();
}

Matrix matrix_exp(const Matrix& M) { return M.exp(); }

Vector sym_pack(const Matrix& M) {
  const int n = static_cast<int>(M.rows());
  Vector v(sym_size(n));
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      v[idx++] = M(i, j);
    }
  }
  return v;
}

Matrix sym_unpack(const Vector& v, int n) {
  Matrix M(n, n);
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      M(i, j) = v[idx];
      M(j, i) = v[idx];
      ++idx;
    }
  }
  return M;
}

}  // namespace stmpc
