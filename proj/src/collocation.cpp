#include "stmpc/collocation.hpp"

#include <cmath>

namespace stmpc {

namespace {

RadauCollocation build_radau3() {
  RadauCollocation c;
  const double s6 = std::sqrt(6.0);
  c.points << 0.0, (4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0;

  // Lagrange basis coefficients via the 4x4 Vandermonde system.
  Eigen::Matrix4d V;
  for (int i = 0; i < 4; ++i) {
    for (int p = 0; p < 4; ++p) V(i, p) = std::pow(c.points[i], p);
  }
  const Eigen::Matrix4d coeffs = V.inverse();  // column j: coefficients of basis j

  for (int j = 0; j < 4; ++j) {
    for (int i = 1; i < 4; ++i) {
      double d = 0.0;
      for (int p = 1; p < 4; ++p) d += p * coeffs(p, j) * std::pow(c.points[i], p - 1);
      c.diff(i - 1, j) = d;
    }
    double q = 0.0;
    for (int p = 0; p < 4; ++p) q += coeffs(p, j) / (p + 1);
    c.quad[j] = q;
  }
  return c;
}

}  // namespace

const RadauCollocation& radau3() {
  static const RadauCollocation c = build_radau3();
  return c;
}

}  // namespace stmpc
