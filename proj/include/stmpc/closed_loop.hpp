#pragma once

#include "stmpc/model.hpp"
#include "stmpc/sim_kernel.hpp"
#include "stmpc/sqp.hpp"
#include "stmpc/trajectory_log.hpp"
#include "stmpc/transcription.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stmpc {

struct SimOptions {
  SimOptions() { solver.max_iterations = 35; }

  double em_step = 1e-3;        ///< Euler-Maruyama step (s), independent of triggers
  double log_stride = 0.01;     ///< dense-record grid (s)
  int threads = 0;              ///< 0: hardware concurrency
  SolveOptions solver;
  TranscribeOptions transcribe;
  /// Accept a non-converged plan whose constraint residual stays below this
  /// (elastic best-effort); above it the previous plan is shifted instead.
  double soft_accept_violation = 0.05;
  SimKernel kernel = SimKernel::Auto;
};

/// One Euler-Maruyama path over a hold interval with uniform step tau/steps.
/// Returns the states at every step boundary (size steps + 1, including x0).
std::vector<Vector> simulate_interval(const LinearSdeModel& model, const Vector& x0,
                                      const Vector& u, double tau, int steps,
                                      const NoiseStreamKey& key, std::uint32_t sample,
                                      std::uint32_t step_base,
                                      SimKernel kernel = SimKernel::Auto);

/// Execute a fixed plan without re-solving: at trigger k the input is held
/// at v_k + K (x(t_k) - mu_k). mus must hold the plan's predicted means at
/// the triggers (size >= N). Validates the covariance prediction, not the
/// receding-horizon loop.
TrajectoryLog apply_plan_open_loop(const LinearSdeModel& model, const AffineFeedbackPlan& plan,
                                   const Vector& x0, const std::vector<Vector>& mus,
                                   const NoiseStreamKey& key, const SimOptions& opts = {});

/// Ensemble first/second moments of the open-loop plan execution at every
/// trigger instant (batched across samples; deterministic reduction).
struct EnsembleMoments {
  std::vector<double> times;     ///< trigger instants t_0..t_N
  std::vector<Vector> mean;
  std::vector<Matrix> cov;
  int samples = 0;
};

EnsembleMoments ensemble_open_loop(const LinearSdeModel& model, const AffineFeedbackPlan& plan,
                                   const Vector& x0, const std::vector<Vector>& mus,
                                   int samples, std::uint64_t seed, int steps_per_interval,
                                   int threads = 0, SimKernel kernel = SimKernel::Auto);

/// Receding-horizon closed loop: measure exactly (belief resets to P = 0),
/// solve the transcribed problem, hold v_0 for Delta_0 while simulating the
/// SDE, charge the resource, repeat until t_end. Solver trouble falls back
/// to the shifted previous solution (logged in the trigger records).
TrajectoryLog run_closed_loop(const Scenario& scenario, double t_end, std::uint64_t seed,
                              const SimOptions& opts = {});

struct EnsembleStats {
  int sample_count = 0;
  std::vector<double> times;                ///< shared dense grid
  std::vector<Vector> mean;                 ///< empirical state mean per time
  std::vector<Matrix> cov;                  ///< empirical state covariance per time
  /// state-row violation frequency per time: index [row][time]
  std::vector<std::vector<double>> state_violation;
  std::vector<std::string> state_row_names;
  std::vector<double> input_violation;      ///< per input row, over all triggers
  std::vector<std::string> input_row_names;
  std::vector<int> delta_histogram;         ///< 20 bins over [delta_min, delta_max]
  std::vector<std::string> sample_errors;   ///< empty string = sample succeeded
};

struct MonteCarloResult {
  EnsembleStats stats;
  std::vector<TrajectoryLog> logs;
};

/// Independent closed-loop runs on decorrelated streams (stream seed =
/// base_seed + sample index); samples run concurrently, aggregation is a
/// fixed-order reduction.
MonteCarloResult monte_carlo(const Scenario& scenario, int samples, std::uint64_t base_seed,
                             const SimOptions& opts = {});

/// Trapezoid quadrature of the realized stage cost over a dense log.
double realized_cost(const TrajectoryLog& log, const Scenario& scenario);

}  // namespace stmpc
