#include "stmpc/model.hpp"
#include "stmpc/rng.hpp"
#include "stmpc/scenario_io.hpp"

#include <nlohmann/json.hpp>

#include <doctest.h>

using namespace stmpc;

namespace {
const std::string kScenarioDir = STMPC_SCENARIO_DIR;
}

TEST_CASE("resource step follows the saturated recursion") {
  ResourceSpec spec;
  spec.rho = 1.0;
  spec.eta.constant = 0.4;
  spec.r_max = 1.0;
  CHECK(resource_step(0.5, 0.3, spec) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(resource_step(0.9, 0.8, spec) == doctest::Approx(1.0).epsilon(1e-12));  // saturation

  ResourceSpec no_cost = spec;
  no_cost.eta.constant = 0.0;
  CHECK(resource_step(0.7, 0.0, no_cost) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("resource step is monotone and capped") {
  ResourceSpec spec;
  spec.rho = 1.3;
  spec.eta.constant = 0.25;
  spec.r_max = 1.0;
  NoiseStreamKey key{99, 1};
  for (std::uint32_t i = 0; i < 200; ++i) {
    const auto u = uniform_pair(key, i, 0, 0);
    const auto w = uniform_pair(key, i, 1, 0);
    const double r = u[0], dr = 0.3 * u[1];
    const double d = 0.1 + 0.7 * w[0], dd = 0.3 * w[1];
    CHECK(resource_step(r + dr, d, spec) >= resource_step(r, d, spec) - 1e-12);
    CHECK(resource_step(r, d + dd, spec) >= resource_step(r, d, spec) - 1e-12);
    CHECK(resource_step(r, d, spec) <= spec.r_max + 1e-15);
  }
}

TEST_CASE("bundled danger scenario carries the reported parameters") {
  const Scenario sc = load_scenario(kScenarioDir + "/danger.json");
  CHECK(sc.model.nx() == 2);
  CHECK(sc.model.Q(0, 0) == doctest::Approx(0.01));
  CHECK(sc.model.Q(1, 1) == doctest::Approx(0.01));
  CHECK(sc.resource.rho == doctest::Approx(1.0));
  CHECK(sc.resource.eta(0.5) == doctest::Approx(0.4));
  const auto [ylo, yhi] = sc.output_box();
  CHECK(ylo == doctest::Approx(-2.0));
  CHECK(yhi == doctest::Approx(1.0));
  const auto [ulo, uhi] = sc.input_box();
  CHECK(ulo == doctest::Approx(-10.0));
  CHECK(uhi == doctest::Approx(10.0));
  for (const auto& c : sc.constraints) CHECK(c.epsilon == doctest::Approx(0.01));
  // reference alternates between 1 and -0.4
  CHECK(sc.cost.reference.eval(2.0) == doctest::Approx(1.0));
  CHECK(sc.cost.reference.eval(7.0) == doctest::Approx(-0.4));
  CHECK(sc.cost.reference.eval(12.0) == doctest::Approx(1.0));
}

TEST_CASE("bundled safe scenario uses the smaller noise and wider bound") {
  const Scenario sc = load_scenario(kScenarioDir + "/safe.json");
  CHECK(sc.model.Q(0, 0) == doctest::Approx(1e-4));
  CHECK(sc.output_box().second == doctest::Approx(1.1));
}

TEST_CASE("validation names the violated invariant") {
  Scenario sc = load_scenario(kScenarioDir + "/danger.json");
  sc.resource.r0 = sc.resource.r_min - 0.5;
  CHECK_THROWS_WITH_AS(sc.validate(), "resource requires r_min <= r0 <= r_max",
                       ValidationError);
}

TEST_CASE("scenario survives a save/load round trip") {
  const Scenario sc = load_scenario(kScenarioDir + "/danger.json");
  const auto j1 = scenario_to_json(sc);
  const Scenario sc2 = scenario_from_json(j1);
  const auto j2 = scenario_to_json(sc2);
  CHECK(j1 == j2);
}

TEST_CASE("trigger times strictly increase for valid schedules") {
  TriggerSchedule s;
  s.delta_min = 0.1;
  s.delta_max = 0.8;
  s.deltas = {0.1, 0.3, 0.8, 0.1};
  s.validate();
  const auto t = s.trigger_times(2.0);
  REQUIRE(t.size() == 5);
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);

  s.deltas.push_back(0.05);  // below the Zeno bound
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("piecewise-constant reference holds values between knots") {
  PiecewiseConstant ref;
  ref.knots = {{0.0, 1.0}, {5.0, -0.4}, {10.0, 1.0}};
  CHECK(ref.eval(-1.0) == doctest::Approx(1.0));
  CHECK(ref.eval(0.0) == doctest::Approx(1.0));
  CHECK(ref.eval(4.999) == doctest::Approx(1.0));
  CHECK(ref.eval(5.0) == doctest::Approx(-0.4));
  CHECK(ref.eval(42.0) == doctest::Approx(1.0));
}

TEST_CASE("beliefs are symmetrized and must be PSD") {
  Matrix P(2, 2);
  P << 1.0, 0.2, 0.1, 1.0;  // slightly asymmetric
  GaussianBelief b(Vector::Zero(2), P);
  CHECK(b.P(0, 1) == doctest::Approx(0.15));
  CHECK(b.P(1, 0) == doctest::Approx(0.15));
  b.validate();

  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // eigenvalues -1, 3
  GaussianBelief nb(Vector::Zero(2), bad);
  CHECK_THROWS_AS(nb.validate(), ValidationError);
}

TEST_CASE("eta admits an affine trigger cost") {
  EtaCost eta{0.1, 0.5};
  CHECK(eta(0.4) == doctest::Approx(0.3));
}
