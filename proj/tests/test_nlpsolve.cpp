#include "stmpc/nlp.hpp"
#include "stmpc/sqp.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace stmpc;

namespace {

class Rosenbrock final : public NlpProblem {
public:
  int dim() const override { return 2; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 0; }
  double objective(const Vector& z) const override {
    const double a = 1.0 - z[0];
    const double b = z[1] - z[0] * z[0];
    return a * a + 100.0 * b * b;
  }
  Vector objective_gradient(const Vector& z) const override {
    Vector g(2);
    const double b = z[1] - z[0] * z[0];
    g[0] = -2.0 * (1.0 - z[0]) - 400.0 * z[0] * b;
    g[1] = 200.0 * b;
    return g;
  }
  void equalities(const Vector&, Vector&, Matrix*) const override {}
  void inequalities(const Vector&, Vector&, Matrix*) const override {}
};

// min x^2 s.t. x >= 1 (as a variable bound)
class BoundQuadratic final : public NlpProblem {
public:
  int dim() const override { return 1; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 0; }
  double objective(const Vector& z) const override { return z[0] * z[0]; }
  Vector objective_gradient(const Vector& z) const override {
    return Vector::Constant(1, 2.0 * z[0]);
  }
  void equalities(const Vector&, Vector&, Matrix*) const override {}
  void inequalities(const Vector&, Vector&, Matrix*) const override {}
  void variable_bounds(Vector& lb, Vector& ub) const override {
    lb = Vector::Constant(1, 1.0);
    ub = Vector::Constant(1, kInfinity);
  }
};

// min x^2 + y^2 s.t. x + y = 1
class EqualityQuadratic final : public NlpProblem {
public:
  int dim() const override { return 2; }
  int num_eq() const override { return 1; }
  int num_ineq() const override { return 0; }
  double objective(const Vector& z) const override { return z.squaredNorm(); }
  Vector objective_gradient(const Vector& z) const override { return 2.0 * z; }
  void equalities(const Vector& z, Vector& c, Matrix* J) const override {
    c[0] = z[0] + z[1] - 1.0;
    if (J) J->setOnes();
  }
  void inequalities(const Vector&, Vector&, Matrix*) const override {}
};

// min (x-2)^2 + y^2 s.t. x <= 1 (general inequality row)
class ActiveInequality final : public NlpProblem {
public:
  int dim() const override { return 2; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 1; }
  double objective(const Vector& z) const override {
    return (z[0] - 2.0) * (z[0] - 2.0) + z[1] * z[1];
  }
  Vector objective_gradient(const Vector& z) const override {
    Vector g(2);
    g << 2.0 * (z[0] - 2.0), 2.0 * z[1];
    return g;
  }
  void equalities(const Vector&, Vector&, Matrix*) const override {}
  void inequalities(const Vector& z, Vector& c, Matrix* J) const override {
    c[0] = z[0] - 1.0;
    if (J) {
      J->setZero();
      (*J)(0, 0) = 1.0;
    }
  }
};

// x <= -1 and x >= 1: inconsistent
class Inconsistent final : public NlpProblem {
public:
  int dim() const override { return 1; }
  int num_eq() const override { return 0; }
  int num_ineq() const override { return 2; }
  double objective(const Vector& z) const override { return z[0] * z[0]; }
  Vector objective_gradient(const Vector& z) const override {
    return Vector::Constant(1, 2.0 * z[0]);
  }
  void equalities(const Vector&, Vector&, Matrix*) const override {}
  void inequalities(const Vector& z, Vector& c, Matrix* J) const override {
    c[0] = z[0] + 1.0;   // x <= -1
    c[1] = 1.0 - z[0];   // x >= 1
    if (J) {
      (*J)(0, 0) = 1.0;
      (*J)(1, 0) = -1.0;
    }
  }
};

// quadratic with an analytically known gradient, one entry corruptible
class Corruptible final : public NlpProblem {
public:
  explicit Corruptible(bool corrupt) : corrupt_(corrupt) {}
  int dim() const override { return 3; }
  int num_eq() const override { return 1; }
  int num_ineq() const override { return 0; }
  double objective(const Vector& z) const override {
    return z[0] * z[0] + 2.0 * z[1] * z[1] + 0.5 * z[2] * z[2] + z[0] * z[1];
  }
  Vector objective_gradient(const Vector& z) const override {
    Vector g(3);
    g << 2.0 * z[0] + z[1], 4.0 * z[1] + z[0], z[2];
    return g;
  }
  void equalities(const Vector& z, Vector& c, Matrix* J) const override {
    c[0] = z[0] + z[1] + z[2] - 1.0;
    if (J) {
      J->setOnes();
      if (corrupt_) (*J)(0, 1) = 1.3;
    }
  }
  void inequalities(const Vector&, Vector&, Matrix*) const override {}

private:
  bool corrupt_;
};

}  // namespace

TEST_CASE("rosenbrock from the classic start") {
  Rosenbrock p;
  Vector z0(2);
  z0 << -1.2, 1.0;
  const auto res = solve(p, z0);
  REQUIRE(res.status == SolveStatus::Converged);
  CHECK(res.z[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.z[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.kkt_residual <= 1e-6);
}

TEST_CASE("active bound with analytic multiplier") {
  BoundQuadratic p;
  const auto res = solve(p, Vector::Constant(1, 3.0));
  REQUIRE(res.status == SolveStatus::Converged);
  CHECK(res.z[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.kkt_residual <= 1e-6);
  CHECK(res.lambda_lb[0] == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("equality-constrained quadratic") {
  EqualityQuadratic p;
  Vector z0(2);
  z0 << 5.0, -3.0;
  const auto res = solve(p, z0);
  REQUIRE(res.status == SolveStatus::Converged);
  CHECK(res.z[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(res.z[1] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(res.lambda_eq[0] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("active general inequality") {
  ActiveInequality p;
  Vector z0(2);
  z0 << 0.0, 0.5;
  const auto res = solve(p, z0);
  REQUIRE(res.status == SolveStatus::Converged);
  CHECK(res.z[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(std::abs(res.z[1]) < 1e-7);
  CHECK(res.lambda_ineq[0] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("inconsistent constraints are detected") {
  Inconsistent p;
  const auto res = solve(p, Vector::Zero(1));
  CHECK(res.status == SolveStatus::InfeasibleDetected);
}

TEST_CASE("independent KKT certificate matches the solver's claim") {
  EqualityQuadratic p;
  Vector z0(2);
  z0 << 7.0, 7.0;
  const auto res = solve(p, z0);
  REQUIRE(res.status == SolveStatus::Converged);
  const auto cert =
      verify_kkt(p, res.z, res.lambda_eq, res.lambda_ineq, res.lambda_lb, res.lambda_ub);
  CHECK(cert.stationarity <= 1e-7);
  CHECK(cert.feasibility <= 1e-8);
  CHECK(cert.complementarity <= 1e-7);
}

TEST_CASE("determinism: identical inputs, identical iterates") {
  Rosenbrock p;
  Vector z0(2);
  z0 << -1.2, 1.0;
  std::ostringstream log_a, log_b;
  SolveOptions opts;
  opts.log = &log_a;
  const auto a = solve(p, z0, opts);
  opts.log = &log_b;
  const auto b = solve(p, z0, opts);
  CHECK(a.z[0] == b.z[0]);  // bitwise
  CHECK(a.z[1] == b.z[1]);
  CHECK(log_a.str() == log_b.str());
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("derivative checker") {
  Corruptible good(false);
  Vector z(3);
  z << 0.3, -0.2, 0.9;
  CHECK(check_derivatives(good, z, 1e-5) <= 1e-7);

  Corruptible bad(true);
  CHECK(check_derivatives(bad, z, 1e-5) > 1e-2);
}

TEST_CASE("finite-difference derivative mode still converges") {
  Rosenbrock p;
  Vector z0(2);
  z0 << -1.2, 1.0;
  SolveOptions opts;
  opts.fd_derivatives = true;
  opts.kkt_tol = 1e-6;
  const auto res = solve(p, z0, opts);
  REQUIRE(res.status == SolveStatus::Converged);
  CHECK(res.z[0] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("iteration log is line-delimited structured records") {
  EqualityQuadratic p;
  std::ostringstream log;
  SolveOptions opts;
  opts.log = &log;
  Vector z0(2);
  z0 << 4.0, 4.0;
  solve(p, z0, opts);
  const std::string s = log.str();
  CHECK(s.find("\"iter\":0") != std::string::npos);
  CHECK(s.find("\"alpha\":") != std::string::npos);
}
