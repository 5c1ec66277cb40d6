#include "stmpc/covariance.hpp"
#include "stmpc/linalg.hpp"
#include "stmpc/rng.hpp"
#include "stmpc/verification.hpp"

#include <doctest.h>

#include <cmath>

using namespace stmpc;

namespace {

LinearSdeModel double_integrator(double q) {
  LinearSdeModel m;
  m.A = (Matrix(2, 2) << 0, 1, 0, 0).finished();
  m.B = (Matrix(2, 1) << 0, 1).finished();
  m.Q = q * Matrix::Identity(2, 2);
  m.C = (Matrix(1, 2) << 1, 0).finished();
  return m;
}

LinearSdeModel scalar_model(double a, double b, double q) {
  LinearSdeModel m;
  m.A = Matrix::Constant(1, 1, a);
  m.B = Matrix::Constant(1, 1, b);
  m.Q = Matrix::Constant(1, 1, q);
  m.C = Matrix::Identity(1, 1);
  return m;
}

}  // namespace

TEST_CASE("mean propagation solves the hold-interval ODE exactly") {
  const auto m = double_integrator(0.0);
  const Vector mu = propagate_mean(m, Vector::Zero(2), Vector::Constant(1, 1.0), 1.0);
  CHECK(mu[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mu[1] == doctest::Approx(1.0).epsilon(1e-12));

  // equilibrium
  const Vector zero = propagate_mean(m, Vector::Zero(2), Vector::Zero(1), 3.7);
  CHECK(zero.norm() == doctest::Approx(0.0));

  // pure integrator: m + c tau
  const auto s = scalar_model(0.0, 1.0, 0.0);
  const Vector mi =
      propagate_mean(s, Vector::Constant(1, 2.0), Vector::Constant(1, 0.5), 4.0);
  CHECK(mi[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("discrete maps degenerate to identity at tau = 0") {
  const auto m = double_integrator(0.3);
  const DiscreteMaps maps = discrete_maps(m, 0.0);
  CHECK((maps.Phi - Matrix::Identity(2, 2)).norm() == doctest::Approx(0.0));
  CHECK(maps.Gamma.norm() == doctest::Approx(0.0));
  CHECK(maps.Wn.norm() == doctest::Approx(0.0));
}

TEST_CASE("accumulated noise covariance matches the nilpotent closed form") {
  // e^{As} = [[1, s], [0, 1]]: Wn = q [[tau + tau^3/3, tau^2/2], [tau^2/2, tau]]
  const auto m = double_integrator(0.01);
  const auto [P, C] = propagate_cov_exact(m, Matrix::Zero(2, 2), Matrix::Zero(1, 2), 1.0);
  CHECK(P(0, 0) == doctest::Approx(0.01 * 4.0 / 3.0).epsilon(1e-9));
  CHECK(P(0, 1) == doctest::Approx(0.005).epsilon(1e-9));
  CHECK(P(1, 0) == doctest::Approx(0.005).epsilon(1e-9));
  CHECK(P(1, 1) == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(C.norm() == doctest::Approx(0.0));  // P0 = 0 anchors a zero cross term

  const auto [P0, C0] =
      propagate_cov_exact(m, 0.3 * Matrix::Identity(2, 2), Matrix::Zero(1, 2), 0.0);
  CHECK((P0 - 0.3 * Matrix::Identity(2, 2)).norm() == doctest::Approx(0.0));
  CHECK((C0 - 0.3 * Matrix::Identity(2, 2)).norm() == doctest::Approx(0.0));
}

TEST_CASE("scalar closed form P = (1 + K tau)^2 P0 + Q tau") {
  const auto s = scalar_model(0.0, 1.0, 0.0);
  const Matrix K = Matrix::Constant(1, 1, -1.0);
  const auto [P, C] = propagate_cov_exact(s, Matrix::Constant(1, 1, 1.0), K, 1.0);
  CHECK(std::abs(P(0, 0)) < 1e-12);
  CHECK(std::abs(C(0, 0)) < 1e-12);

  const auto s2 = scalar_model(0.0, 1.0, 0.3);
  const Matrix K2 = Matrix::Constant(1, 1, -0.5);
  const auto [P2, C2] = propagate_cov_exact(s2, Matrix::Constant(1, 1, 2.0), K2, 0.8);
  CHECK(P2(0, 0) == doctest::Approx(0.36 * 2.0 + 0.3 * 0.8).epsilon(1e-10));
  CHECK(C2(0, 0) == doctest::Approx(0.6 * 2.0).epsilon(1e-10));

  // the RK4 path reproduces it
  const auto res = propagate_cov_closed_loop(s2, GaussianBelief(Vector::Zero(1),
                                             Matrix::Constant(1, 1, 2.0)),
                                             Vector::Zero(1), K2, 0.8, 64);
  CHECK(res.belief_end.P(0, 0) == doctest::Approx(P2(0, 0)).epsilon(1e-9));
  CHECK(res.cross_end.Ptk(0, 0) == doctest::Approx(C2(0, 0)).epsilon(1e-9));
}

TEST_CASE("zero gain reduces to the open-loop Lyapunov dynamics") {
  const auto m = double_integrator(0.02);
  Matrix P0(2, 2);
  P0 << 0.4, 0.1, 0.1, 0.2;
  const GaussianBelief b0(Vector::Zero(2), P0);
  const auto closed =
      propagate_cov_closed_loop(m, b0, Vector::Zero(1), Matrix::Zero(1, 2), 0.7, 128);
  const auto [P_exact, C_exact] = propagate_cov_exact(m, P0, Matrix::Zero(1, 2), 0.7);
  CHECK((closed.belief_end.P - P_exact).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((closed.cross_end.Ptk - C_exact).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("first interval covariance ignores the gain entirely") {
  // exact initial measurement: P0 = 0 makes the feedback term vanish
  const auto m = double_integrator(0.01);
  const GaussianBelief b0(Vector::Zero(2), Matrix::Zero(2, 2));
  const auto base =
      propagate_cov_closed_loop(m, b0, Vector::Zero(1), Matrix::Zero(1, 2), 0.6, 64);
  NoiseStreamKey key{5150, 0};
  for (std::uint32_t i = 0; i < 10; ++i) {
    Matrix K(1, 2);
    K << 8.0 * (uniform_pair(key, i, 0, 0)[0] - 0.5),
        8.0 * (uniform_pair(key, i, 0, 0)[1] - 0.5);
    const auto res = propagate_cov_closed_loop(m, b0, Vector::Zero(1), K, 0.6, 64);
    CHECK((res.belief_end.P - base.belief_end.P).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(res.cross_end.Ptk.cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("oracle equivalence on random instances") {
  const auto rep = verify_covprop_oracle(40, 0xfeedULL);
  INFO(rep.detail);
  CHECK(rep.pass);
}

TEST_CASE("covariance samples remain PSD along the grid") {
  const auto m = double_integrator(0.05);
  Matrix K(1, 2);
  K << -2.0, -1.5;
  Matrix P0(2, 2);
  P0 << 0.3, -0.05, -0.05, 0.1;
  const auto res = propagate_cov_closed_loop(m, GaussianBelief(Vector::Zero(2), P0),
                                             Vector::Constant(1, 0.3), K, 1.0, 128);
  for (const auto& s : res.samples) {
    CHECK((s.belief.P - s.belief.P.transpose()).norm() == doctest::Approx(0.0));
    CHECK(min_eigenvalue(s.belief.P) >= -1e-10);
  }
}

TEST_CASE("conditional slices obey the three-phase structure") {
  const auto m = double_integrator(0.03);
  Matrix K(1, 2);
  K << -1.0, -0.8;
  TriggerSchedule sch;
  sch.delta_min = 0.05;
  sch.delta_max = 1.0;
  sch.deltas = {0.4, 0.3, 0.5};
  const int steps = 16;
  const auto slices = propagate_conditional_slices(m, sch, K, {}, steps);
  REQUIRE(slices.P_slice.size() == 3);

  // zero before its own interval
  for (int i = 0; i < 3; ++i) {
    for (std::size_t g = 0; g < slices.times.size(); ++g) {
      if (slices.interval_of[g] < i) {
        CHECK(slices.P_slice[i][g].norm() == doctest::Approx(0.0));
      }
    }
  }

  // sum of slices equals the full covariance on every grid point
  const auto full = propagate_schedule(m, sch, K, Matrix::Zero(2, 2), steps);
  for (std::size_t g = 0; g < full.times.size(); ++g) {
    Matrix sum = Matrix::Zero(2, 2);
    for (const auto& s : slices.P_slice) sum += s[g];
    CHECK((sum - full.P[g]).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("single-interval schedule: the one slice is the full covariance") {
  const auto m = double_integrator(0.02);
  TriggerSchedule sch;
  sch.deltas = {0.6};
  sch.delta_min = 0.1;
  sch.delta_max = 0.8;
  const Matrix K = Matrix::Zero(1, 2);
  const auto slices = propagate_conditional_slices(m, sch, K, {}, 32);
  const auto full = propagate_schedule(m, sch, K, Matrix::Zero(2, 2), 32);
  REQUIRE(slices.P_slice.size() == 1);
  for (std::size_t g = 0; g < full.times.size(); ++g) {
    CHECK((slices.P_slice[0][g] - full.P[g]).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("decomposition identity holds on random schedules") {
  const auto rep = verify_decomposition(5, 12, 0x1234ULL);
  INFO(rep.detail);
  CHECK(rep.pass);
}

TEST_CASE("argument validation") {
  const auto m = double_integrator(0.01);
  const GaussianBelief b0(Vector::Zero(2), Matrix::Zero(2, 2));
  CHECK_THROWS_AS(
      propagate_cov_closed_loop(m, b0, Vector::Zero(1), Matrix::Zero(1, 2), -1.0, 8),
      std::invalid_argument);
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(propagate_cov_exact(m, bad, Matrix::Zero(1, 2), 0.5),
                  std::invalid_argument);
}
