#pragma once

#include "stmpc/collocation.hpp"
#include "stmpc/covariance.hpp"
#include "stmpc/model.hpp"
#include "stmpc/nlp.hpp"

#include <array>
#include <memory>
#include <vector>

namespace stmpc {

/// Index map of the transcribed decision vector. Controls first (v, vec K,
/// Delta, resource levels), then per-interval collocation states at the
/// interval start plus the three Radau nodes. The mean uses n_x coordinates,
/// the covariance its n_x(n_x+1)/2 symmetric coordinates; the cross
/// covariance keeps all n_x^2 coordinates because it is only symmetric at
/// its anchor instant.
struct DecisionLayout {
  int N = 0;
  int nx = 0;
  int nu = 0;
  bool covariance = true;

  int ns() const { return nx * (nx + 1) / 2; }
  int nf() const { return nx * nx; }
  int num_gain() const { return covariance ? nu * nx : 0; }
  int block_size() const { return 4 * (nx + (covariance ? ns() + nf() : 0)); }
  int num_controls() const { return N * nu + num_gain() + 2 * N; }
  int states_begin() const { return num_controls(); }
  int dim() const { return num_controls() + N * block_size(); }

  int v(int k) const { return k * nu; }
  int gain() const { return covariance ? N * nu : -1; }
  int delta(int k) const { return N * nu + num_gain() + k; }
  int resource(int k) const { return N * nu + num_gain() + N + k; }  ///< r_{k+1}
  int mu(int k, int j) const { return states_begin() + k * block_size() + j * nx; }
  int cov(int k, int j) const {
    return states_begin() + k * block_size() + 4 * nx + j * ns();
  }
  int cross(int k, int j) const {
    return states_begin() + k * block_size() + 4 * nx + 4 * ns() + j * nf();
  }
};

struct TranscribeOptions {
  double gain_bound = 50.0;          ///< box on entries of K
  bool expected_cost_term = false;   ///< add trace(C'WyC P) to the stage cost
  int force_covariance = -1;         ///< -1: follow scenario.stochastic; 0/1: override
};

/// Shift a global-time piecewise-constant signal to plan-local time (t0 = 0).
PiecewiseConstant shift_reference(const PiecewiseConstant& global, double t0);

/// Direct Radau-IIA collocation of the stochastic self-triggered OCP on
/// interval-normalized time: every dynamics defect is Delta_k * f(states)
/// minus a fixed linear combination of node states, hence affine in Delta_k.
/// With covariance disabled this is the deterministic resource-aware
/// problem; with it enabled the held-feedback covariance and cross
/// covariance ODEs are collocated alongside the mean, the tightened chance
/// rows are enforced at every collocation node (sqrt form, radicand clamped
/// flat near zero), and the saturated resource recursion is relaxed to two
/// inequalities whose exactness is certified after the solve.
class TranscribedProblem final : public NlpProblem {
public:
  TranscribedProblem(const Scenario& scenario, const GaussianBelief& belief0, double r0,
                     const PiecewiseConstant& reference_local,
                     const TranscribeOptions& opts = {});

  int dim() const override { return layout_.dim(); }
  int num_eq() const override;
  int num_ineq() const override;
  double objective(const Vector& z) const override;
  Vector objective_gradient(const Vector& z) const override;
  void equalities(const Vector& z, Vector& c, Matrix* J) const override;
  void inequalities(const Vector& z, Vector& c, Matrix* J) const override;
  void variable_bounds(Vector& lb, Vector& ub) const override;
  bool eliminate(const Matrix& JE, const Vector& cE, EqElimination& out) const override;
  bool objective_hessian(const Vector& z, Matrix& H) const override;
  bool lagrangian_hessian(const Vector& z, const Vector& lambda_eq,
                          const Vector& lambda_ineq, Matrix& H) const override;

  const DecisionLayout& layout() const { return layout_; }
  const Scenario& scenario() const { return scenario_; }
  const GaussianBelief& belief0() const { return belief0_; }
  double r0() const { return r0_; }

  /// Midpoint intervals, LQR-like tracking inputs on the mean, K = 0,
  /// covariance states from an exact open-loop rollout, resource recursion.
  Vector initial_guess() const;

  /// Dynamics-consistent decision vector from given intervals, nominal
  /// inputs and gain: states filled by exact per-interval maps, resource by
  /// the clipped recursion. Used for receding-horizon warm starts.
  Vector guess_from(const std::vector<double>& deltas, const std::vector<Vector>& vs,
                    const Matrix& K) const;

  /// Reference value frozen for node j of interval k (j = 0..3).
  double frozen_reference(int k, int j) const { return ref_nodes_[k][j]; }

private:
  struct StateRow {
    Vector H;
    double h = 0.0;
    double quantile = 0.0;  // N^{-1}(1 - eps); 0 leaves the row untightened
    Vector wP;              // sym-coordinate weights of H H'
  };
  struct InputRow {
    Vector H;
    double h = 0.0;
    double quantile = 0.0;
  };
  // with an exact initial measurement the k = 0 input backoff is
  // identically zero and its sqrt is degenerate; the row is emitted plain
  bool tighten_first_input_ = true;

  void stage_terms(const Vector& z, int k, int j, double& value, Vector* dmu,
                   Vector* dv) const;

  Scenario scenario_;
  GaussianBelief belief0_;
  double r0_ = 0.0;
  TranscribeOptions opts_;
  DecisionLayout layout_;
  PiecewiseConstant reference_;
  std::vector<std::array<double, 4>> ref_nodes_;
  double ref_terminal_ = 0.0;
  std::vector<StateRow> state_rows_;
  std::vector<InputRow> input_rows_;
  Matrix lyap_sym_;   // sym coords of dP -> sym coords of A dP + dP A'
  Matrix drift_full_; // full coords of dC -> full coords of A dC
  Vector wcost_sym_;  // sym-coordinate weights of C'WyC (expected-cost term)
};

/// Build the problem (OP-level convenience wrapper).
std::unique_ptr<TranscribedProblem> transcribe(const Scenario& scenario,
                                               const GaussianBelief& belief0, double r0,
                                               const PiecewiseConstant& reference_local,
                                               const TranscribeOptions& opts = {});

/// Stage-plus-terminal cost of a decision vector (the problem's objective).
double objective_value(const TranscribedProblem& problem, const Vector& z);

struct PlanPrediction {
  std::vector<double> trigger_times;       ///< local, size N+1
  std::vector<GaussianBelief> beliefs;     ///< at t_0..t_N
  std::vector<Matrix> cross_end;           ///< cross covariance at interval ends
  std::vector<double> resources;           ///< r_0..r_N
  double max_equality_residual = 0.0;
  double max_inequality_violation = 0.0;
  double max_tightening_violation = 0.0;   ///< sqrt-form rows, via the chance module
  bool resource_relaxation_exact = true;   ///< each r_{k+1} hits one side of the min
  double resource_relaxation_slack = 0.0;
};

/// Read the plan and dense predictions out of a decision vector. When
/// certify is true, throws if the constraint residual exceeds residual_tol.
std::pair<AffineFeedbackPlan, PlanPrediction> extract_plan(const TranscribedProblem& problem,
                                                           const Vector& z,
                                                           double residual_tol = 1e-6,
                                                           bool certify = true);

}  // namespace stmpc
