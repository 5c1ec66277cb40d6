#include "stmpc/collocation.hpp"

#include <doctest.h>

#include <cmath>

using namespace stmpc;

TEST_CASE("radau nodes and weights") {
  const auto& b = radau3();
  const double s6 = std::sqrt(6.0);
  CHECK(b.points[0] == 0.0);
  CHECK(b.points[1] == doctest::Approx((4.0 - s6) / 10.0).epsilon(1e-14));
  CHECK(b.points[2] == doctest::Approx((4.0 + s6) / 10.0).epsilon(1e-14));
  CHECK(b.points[3] == 1.0);

  // the interpolatory rule on {0, radau nodes} reduces to 3-point Radau
  CHECK(std::abs(b.quad[0]) < 1e-12);
  CHECK(b.quad[1] == doctest::Approx((16.0 - s6) / 36.0).epsilon(1e-12));
  CHECK(b.quad[2] == doctest::Approx((16.0 + s6) / 36.0).epsilon(1e-12));
  CHECK(b.quad[3] == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
  CHECK(b.quad.sum() == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("differentiation and quadrature are exact for cubics") {
  const auto& b = radau3();
  auto p = [](double t) { return 2.0 * t * t * t - t * t + 0.5 * t - 3.0; };
  auto dp = [](double t) { return 6.0 * t * t - 2.0 * t + 0.5; };

  for (int i = 1; i < 4; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) acc += b.diff(i - 1, j) * p(b.points[j]);
    CHECK(acc == doctest::Approx(dp(b.points[i])).epsilon(1e-11));
  }
  // rows of D annihilate constants
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(b.diff.row(i).sum()) < 1e-12);
  }
  double integral = 0.0;
  for (int j = 0; j < 4; ++j) integral += b.quad[j] * p(b.points[j]);
  CHECK(integral == doctest::Approx(0.5 - 1.0 / 3.0 + 0.25 - 3.0).epsilon(1e-12));
}
