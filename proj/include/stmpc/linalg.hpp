#pragma once

#include <Eigen/Dense>

namespace stmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// (M + M') / 2.
inline Matrix symmetrize(const Matrix& M) { return 0.5 * (M + M.transpose()); }

/// Smallest eigenvalue of the symmetrized matrix.
double min_eigenvalue(const Matrix& M);

/// True when the symmetrized matrix has all eigenvalues >= -tol.
bool is_psd(const Matrix& M, double tol = 1e-10);

/// Factor L with L L' = M for symmetric PSD M, tolerant of zero and
/// slightly negative (within tol) eigenvalues.
Matrix psd_factor(const Matrix& M, double tol = 1e-10);

/// Nearest-PSD projection (eigenvalue clipping). Throws when an eigenvalue
/// is below -tol.
Matrix project_psd(const Matrix& M, double tol = 1e-7);

/// Dense matrix exponential (scaling-and-squaring Pade).
Matrix matrix_exp(const Matrix& M);

/// Number of symmetric coordinates of an n x n matrix.
inline int sym_size(int n) { return n * (n + 1) / 2; }

/// Pack the upper triangle (row-major) of a symmetric matrix.
Vector sym_pack(const Matrix& M);

/// Inverse of sym_pack.
Matrix sym_unpack(const Vector& v, int n);

/// d(sym coords) index of entry (i, j), i <= j, of an n x n matrix.
inline int sym_index(int i, int j, int n) {
  // row-major upper triangle: row i starts at i*n - i*(i-1)/2
  return i * n - i * (i - 1) / 2 + (j - i);
}

}  // namespace stmpc
