#pragma once

#include "stmpc/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stmpc {

/// Outcome of one verification suite. On failure `failing_instance` holds a
/// JSON description of the offending instance for replay.
struct VerifyReport {
  std::string name;
  bool pass = false;
  double worst = 0.0;
  std::string detail;
  std::string failing_instance;
};

/// Closed-form vs RK4 propagation on random instances (n_x <= 4, entries in
/// [-2, 2], Q PSD, tau in [0.05, 1], random gain): entrywise agreement
/// within 1e-6 relative with a 1e-9 absolute floor, 256 RK4 steps.
VerifyReport verify_covprop_oracle(int instances, std::uint64_t seed);

/// Sigma-field decomposition identity: sum of conditional slices equals the
/// full covariance within 1e-8 max-abs on every grid point, for random
/// schedules with N <= n_max.
VerifyReport verify_decomposition(int n_max, int schedules, std::uint64_t seed);

/// Monte Carlo consistency of the covariance dynamics: ensemble covariance
/// of an open-loop plan execution stays within 3 standard errors of the
/// closed-form prediction at every trigger.
VerifyReport verify_mc_consistency(int samples, int steps_per_interval, std::uint64_t seed,
                                   int threads = 0);

/// Quantile round trip: |Phi(quantile(p)) - p| <= 1e-9 on a grid spanning
/// [1e-4, 1 - 1e-4].
VerifyReport verify_quantile_roundtrip();

/// The fixed double-integrator plan used by the Monte Carlo suites.
struct FixedPlanCheck {
  LinearSdeModel model;
  std::vector<double> deltas;
  std::vector<Vector> nominal_inputs;
  Matrix gain;
  Vector x0;
};
FixedPlanCheck mc_check_instance();

}  // namespace stmpc
