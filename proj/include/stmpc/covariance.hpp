#pragma once

#include "stmpc/model.hpp"

#include <utility>
#include <vector>

namespace stmpc {

/// Zero-order-hold discrete maps over a duration tau:
///   Phi   = exp(A tau)
///   Gamma = (int_0^tau exp(A s) ds) B
///   Wn    = int_0^tau exp(A s) Q exp(A' s) ds
/// Built from augmented-matrix exponentials (Van Loan construction); serves
/// as the closed-form oracle for the ODE propagation below.
struct DiscreteMaps {
  Matrix Phi;
  Matrix Gamma;
  Matrix Wn;
};

DiscreteMaps discrete_maps(const LinearSdeModel& model, double tau);

/// Mean over one hold interval: solves d mu/dt = A mu + B v exactly.
Vector propagate_mean(const LinearSdeModel& model, const Vector& mu0, const Vector& v,
                      double tau);

struct PropagationSample {
  double t_offset = 0.0;
  GaussianBelief belief;
  CrossCov cross;
};

struct PropagationResult {
  GaussianBelief belief_end;
  CrossCov cross_end;
  std::vector<PropagationSample> samples;  ///< integrator grid, including both endpoints
};

/// Joint mean / covariance / cross-covariance dynamics over one trigger
/// interval under held feedback u = v + K (x(t_k) - mu(t_k)):
///   d mu  /dt = A mu + B v
///   d P   /dt = A P + P A' + B K Ptk' + Ptk (B K)' + Q
///   d Ptk /dt = A Ptk + B K P(t_k)
/// with the reset contract Ptk(t_k) = P(t_k). Classical fixed-step RK4;
/// P is re-symmetrized after every step.
PropagationResult propagate_cov_closed_loop(const LinearSdeModel& model,
                                            const GaussianBelief& belief0, const Vector& v,
                                            const Matrix& K, double tau, int steps = 64);

/// Closed-form endpoint of the same dynamics:
///   P(tau)   = (Phi + Gamma K) P0 (Phi + Gamma K)' + Wn
///   Ptk(tau) = (Phi + Gamma K) P0
std::pair<Matrix, Matrix> propagate_cov_exact(const LinearSdeModel& model, const Matrix& P0,
                                              const Matrix& K, double tau);

/// Covariance trajectory across a whole schedule (P(t_0) = P0, cross reset
/// at every trigger), on a uniform per-interval RK4 grid.
struct ScheduleTrajectory {
  std::vector<double> times;       ///< grid instants, starting at t = 0
  std::vector<Matrix> P;           ///< covariance at each grid instant
  std::vector<Matrix> cross;       ///< cross-covariance w.r.t. the active trigger
  std::vector<int> interval_of;    ///< which interval each grid instant belongs to
};

ScheduleTrajectory propagate_schedule(const LinearSdeModel& model,
                                      const TriggerSchedule& schedule, const Matrix& K,
                                      const Matrix& P0, int steps_per_interval = 64);

/// Per-interval conditional covariance slices P_i(t) of the noise-interval
/// decomposition, on the same grid as propagate_schedule with P0 = 0:
/// slice i is zero before t_i, open-loop Lyapunov-with-Q inside
/// (t_i, t_{i+1}], and feedback-corrected (Q-free) afterwards. Summing the
/// slices over i reproduces the full covariance.
struct ConditionalSlices {
  std::vector<double> times;
  std::vector<int> interval_of;
  std::vector<int> slice_index;              ///< which interval each slice conditions on
  std::vector<std::vector<Matrix>> P_slice;  ///< [slice][grid point]
};

ConditionalSlices propagate_conditional_slices(const LinearSdeModel& model,
                                               const TriggerSchedule& schedule,
                                               const Matrix& K,
                                               const std::vector<int>& slice_indices = {},
                                               int steps_per_interval = 64);

}  // namespace stmpc
