#pragma once

#include <Eigen/Dense>

namespace stmpc {

/// Degree-3 Radau IIA collocation data on the normalized interval [0, 1].
/// The interpolation basis runs through the interval start (tau = 0) and the
/// three Radau nodes; the last node sits at tau = 1, so node 3 doubles as
/// the interval endpoint.
///
/// points:  {0, (4-sqrt6)/10, (4+sqrt6)/10, 1}
/// diff(i-1, j): derivative of Lagrange basis polynomial j at node i
/// quad:    integral of basis polynomial j over [0, 1] (quad[0] vanishes;
///          the rule reduces to the 3-point Radau quadrature, degree 4)
struct RadauCollocation {
  static constexpr int degree = 3;
  Eigen::Vector4d points;
  Eigen::Matrix<double, 3, 4> diff;
  Eigen::Vector4d quad;
};

const RadauCollocation& radau3();

}  // namespace stmpc
