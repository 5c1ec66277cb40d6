#pragma once

#include "stmpc/model.hpp"

namespace stmpc {

/// Standard normal CDF, Phi(z) = 0.5 erfc(-z / sqrt(2)).
double normal_cdf(double z);

/// Inverse standard normal CDF. Rational initial approximation refined by a
/// Newton step on the erfc-based CDF; |Phi(z) - p| <= 1e-9 on (0, 1).
double normal_quantile(double p);

/// One deterministically tightened half-space row.
struct TightenedRow {
  Vector H;
  double h_tight = 0.0;
  double backoff = 0.0;  ///< sqrt(H' P H) * N^{-1}(1 - epsilon), >= 0
};

/// State-row tightening: H' mu <= h - sqrt(H' P H) N^{-1}(1 - eps).
/// Radicands within -1e-12 of zero are clamped; anything more negative
/// signals a non-PSD covariance upstream and throws.
TightenedRow tighten_state_row(const Vector& H, double h, double epsilon, const Matrix& P);

/// Input-row tightening at a trigger: the held input is v_k + K (x - mu),
/// so u(t_k) ~ N(v_k, K P(t_k) K') and the row constrains the nominal v_k.
TightenedRow tighten_input_row(const Vector& H, double h, double epsilon, const Matrix& K,
                               const Matrix& P_at_trigger);

}  // namespace stmpc
