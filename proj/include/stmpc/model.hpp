#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown by validate() / load_scenario() with the first violated invariant.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Continuous-time LTI system driven by Wiener noise:
///   dx = (A x + B u) dt + dW,   E{W(t) W(s)'} = Q min(s,t),   y = C x.
struct LinearSdeModel {
  Matrix A;  ///< drift, n_x x n_x (1/s)
  Matrix B;  ///< input map, n_x x n_u
  Matrix Q;  ///< diffusion covariance rate, n_x x n_x (state^2/s)
  Matrix C;  ///< output map, n_y x n_x

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
  int ny() const { return static_cast<int>(C.rows()); }

  void validate() const;
};

/// Trigger intervals Delta_k with Zeno / freeze bounds.
struct TriggerSchedule {
  std::vector<double> deltas;
  double delta_min = 0.1;
  double delta_max = 0.8;

  int horizon() const { return static_cast<int>(deltas.size()); }

  /// Cumulative trigger instants t_0, t_1, ..., t_N (size N+1).
  std::vector<double> trigger_times(double t0) const;

  void validate() const;
};

/// Trigger cost eta(Delta) = constant + slope * Delta (constant by default).
struct EtaCost {
  double constant = 0.4;
  double slope = 0.0;

  double operator()(double delta) const { return constant + slope * delta; }
};

/// Resource recharge/discharge parameters.
struct ResourceSpec {
  double rho = 1.0;    ///< recharge rate (resource/s)
  EtaCost eta;         ///< per-trigger cost
  double r_max = 1.0;  ///< saturation level
  double r_min = 0.0;  ///< lower bound
  double r0 = 1.0;     ///< initial resource

  void validate() const;
};

/// One step of the saturated resource recursion:
///   r(t_{k+1}) = min(rho * delta + r - eta(delta), r_max).
/// The r >= r_min side is the caller's constraint to check.
double resource_step(double r, double delta, const ResourceSpec& spec);

/// Gaussian state distribution N(mu, P). P is symmetrized on construction
/// and must be PSD to tolerance 1e-10.
struct GaussianBelief {
  Vector mu;
  Matrix P;

  GaussianBelief() = default;
  GaussianBelief(Vector mu_in, Matrix P_in);

  void validate() const;
};

/// Cross-covariance between the running time t and the most recent trigger
/// t_k: E{(x(t)-mu(t))(x(t_k)-mu(t_k))'}. Equals P(t_k) at its anchor.
struct CrossCov {
  Matrix Ptk;
  int anchor_index = 0;
};

/// Zero-order-hold feedback plan: u(t) = v_k + K (x(t_k) - mu(t_k)) on
/// (t_k, t_{k+1}]. One gain K shared across all intervals.
struct AffineFeedbackPlan {
  std::vector<Vector> v;
  Matrix K;
  TriggerSchedule schedule;

  void validate(const LinearSdeModel& model) const;
};

enum class ConstraintTarget { State, Input };

/// Polytopic chance constraint: P(H_i' z <= h_i) >= 1 - epsilon per row,
/// where z is the state or the input depending on target.
struct PolytopicChanceConstraint {
  ConstraintTarget target = ConstraintTarget::State;
  std::vector<Vector> H;
  std::vector<double> h;
  double epsilon = 0.01;

  int rows() const { return static_cast<int>(H.size()); }
  void validate(const LinearSdeModel& model) const;
};

/// Piecewise-constant signal given as (switch time, value) knots; constant
/// at the last value after the final knot and at the first before t_0.
struct PiecewiseConstant {
  std::vector<std::pair<double, double>> knots;

  double eval(double t) const;
  double end_time() const { return knots.empty() ? 0.0 : knots.back().first; }
};

/// Stage cost weights on the output error and input, optional terminal
/// weight, and the tracking reference.
struct CostSpec {
  Matrix Wy;     ///< output stage weight, n_y x n_y
  Matrix Wu;     ///< input stage weight, n_u x n_u
  Matrix Wterm;  ///< terminal output weight (may be zero / empty)
  PiecewiseConstant reference;

  void validate(const LinearSdeModel& model, double t_end) const;
};

/// Everything one optimal-control problem instance needs, plus simulation
/// parameters. Immutable after load; shareable across threads.
struct Scenario {
  std::string name;
  LinearSdeModel model;
  ResourceSpec resource;
  std::vector<PolytopicChanceConstraint> constraints;
  CostSpec cost;
  int horizon_n = 10;
  double delta_min = 0.1;
  double delta_max = 0.8;
  double t_end = 20.0;
  Vector x0;
  std::uint64_t seed = 0;
  bool stochastic = true;   ///< false: Q treated as zero, no covariance states
  bool tightening = true;   ///< false: chance rows enforced on the mean only
  double delta_preference_weight = 1e-3;  ///< tie-break toward long intervals

  void validate() const;

  /// Output box [y_min, y_max] recovered from state rows proportional to a
  /// row of C (NaN when a side is unbounded). Used by trace emission.
  std::pair<double, double> output_box() const;

  /// Input box for the first input component, same convention.
  std::pair<double, double> input_box() const;
};

}  // namespace stmpc
