#include "stmpc/chance.hpp"

#include <cmath>
#include <stdexcept>

namespace stmpc {

double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

namespace {

// Acklam's rational approximation to the inverse normal CDF (~1.15e-9
// relative); the Newton polish below takes it to machine accuracy.
double quantile_seed(double p) {
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  static constexpr double p_low = 0.02425;

  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double q = p - 0.5;
  double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  }
  double z = quantile_seed(p);
  // One Newton step on Phi(z) - p; a second guards the extreme tails.
  for (int it = 0; it < 2; ++it) {
    double err = normal_cdf(z) - p;
    double pdf = normal_pdf(z);
    if (pdf <= 0.0) break;
    z -= err / pdf;
  }
  return z;
}

namespace {

double backoff_value(const Vector& H, double epsilon, const Matrix& P_eff) {
  if (!(epsilon > 0.0 && epsilon <= 0.5)) {
    throw std::invalid_argument("tighten: epsilon must lie in (0, 0.5]");
  }
  double radicand = H.dot(P_eff * H);
  if (radicand < 0.0) {
    if (radicand < -1e-12) {
      throw std::invalid_argument("tighten: negative variance, covariance not PSD");
    }
    radicand = 0.0;
  }
  return std::sqrt(radicand) * normal_quantile(1.0 - epsilon);
}

}  // namespace

TightenedRow tighten_state_row(const Vector& H, double h, double epsilon, const Matrix& P) {
  TightenedRow row;
  row.H = H;
  row.backoff = backoff_value(H, epsilon, P);
  row.h_tight = h - row.backoff;
  return row;
}

TightenedRow tighten_input_row(const Vector& H, double h, double epsilon, const Matrix& K,
                               const Matrix& P_at_trigger) {
  TightenedRow row;
  row.H = H;
  row.backoff = backoff_value(H, epsilon, K * P_at_trigger * K.transpose());
  row.h_tight = h - row.backoff;
  return row;
}

}  // namespace stmpc
