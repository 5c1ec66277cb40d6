#include "stmpc/covariance.hpp"

#include "stmpc/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace stmpc {

DiscreteMaps discrete_maps(const LinearSdeModel& model, double tau) {
  const int n = model.nx();
  const int m = model.nu();
  DiscreteMaps maps;

  // [Phi, Gamma; 0, I] = exp([A, B; 0, 0] tau)
  Matrix M1 = Matrix::Zero(n + m, n + m);
  M1.topLeftCorner(n, n) = model.A;
  M1.topRightCorner(n, m) = model.B;
  Matrix E1 = matrix_exp(M1 * tau);
  maps.Phi = E1.topLeftCorner(n, n);
  maps.Gamma = E1.topRightCorner(n, m);

  // Van Loan: exp([-A, Q; 0, A'] tau) = [*, F; 0, G] with Wn = G' F.
  Matrix M2 = Matrix::Zero(2 * n, 2 * n);
  M2.topLeftCorner(n, n) = -model.A;
  M2.topRightCorner(n, n) = model.Q;
  M2.bottomRightCorner(n, n) = model.A.transpose();
  Matrix E2 = matrix_exp(M2 * tau);
  maps.Wn = symmetrize(E2.bottomRightCorner(n, n).transpose() * E2.topRightCorner(n, n));
  return maps;
}

Vector propagate_mean(const LinearSdeModel& model, const Vector& mu0, const Vector& v,
                      double tau) {
  if (tau < 0.0) throw std::invalid_argument("propagate_mean: tau must be >= 0");
  DiscreteMaps maps = discrete_maps(model, tau);
  return maps.Phi * mu0 + maps.Gamma * v;
}

namespace {

struct CovState {
  Vector mu;
  Matrix P;
  Matrix C;  // cross-covariance w.r.t. the interval's trigger
};

// held-feedback interval dynamics; Pk is P at the trigger, frozen over the
// interval, so the cross term B K Pk is constant.
CovState cov_derivative(const LinearSdeModel& model, const Vector& v, const Matrix& BK,
                        const Matrix& Pk, const CovState& s) {
  CovState d;
  d.mu = model.A * s.mu + model.B * v;
  d.P = model.A * s.P + s.P * model.A.transpose() + BK * s.C.transpose() +
        s.C * BK.transpose() + model.Q;
  d.C = model.A * s.C + BK * Pk;
  return d;
}

CovState rk4_step(const LinearSdeModel& model, const Vector& v, const Matrix& BK,
                  const Matrix& Pk, const CovState& s, double h) {
  CovState k1 = cov_derivative(model, v, BK, Pk, s);
  CovState s2{s.mu + 0.5 * h * k1.mu, s.P + 0.5 * h * k1.P, s.C + 0.5 * h * k1.C};
  CovState k2 = cov_derivative(model, v, BK, Pk, s2);
  CovState s3{s.mu + 0.5 * h * k2.mu, s.P + 0.5 * h * k2.P, s.C + 0.5 * h * k2.C};
  CovState k3 = cov_derivative(model, v, BK, Pk, s3);
  CovState s4{s.mu + h * k3.mu, s.P + h * k3.P, s.C + h * k3.C};
  CovState k4 = cov_derivative(model, v, BK, Pk, s4);
  CovState out;
  out.mu = s.mu + (h / 6.0) * (k1.mu + 2.0 * k2.mu + 2.0 * k3.mu + k4.mu);
  out.P = symmetrize(s.P + (h / 6.0) * (k1.P + 2.0 * k2.P + 2.0 * k3.P + k4.P));
  out.C = s.C + (h / 6.0) * (k1.C + 2.0 * k2.C + 2.0 * k3.C + k4.C);
  return out;
}

}  // namespace

PropagationResult propagate_cov_closed_loop(const LinearSdeModel& model,
                                            const GaussianBelief& belief0, const Vector& v,
                                            const Matrix& K, double tau, int steps) {
  if (tau < 0.0) throw std::invalid_argument("propagate_cov_closed_loop: tau must be >= 0");
  if (steps < 1) throw std::invalid_argument("propagate_cov_closed_loop: steps must be >= 1");
  if (!is_psd(belief0.P, 1e-10)) {
    throw std::invalid_argument("propagate_cov_closed_loop: P0 is not PSD");
  }

  const Matrix BK = model.B * K;
  const Matrix Pk = symmetrize(belief0.P);
  CovState s{belief0.mu, Pk, Pk};  // reset contract: Ptk(t_k) = P(t_k)

  PropagationResult result;
  result.samples.reserve(steps + 1);
  result.samples.push_back({0.0, GaussianBelief(s.mu, s.P), CrossCov{s.C, 0}});

  const double h = tau / steps;
  for (int i = 0; i < steps; ++i) {
    s = rk4_step(model, v, BK, Pk, s, h);
    result.samples.push_back({h * (i + 1), GaussianBelief(s.mu, s.P), CrossCov{s.C, 0}});
  }
  result.belief_end = GaussianBelief(s.mu, s.P);
  result.cross_end = CrossCov{s.C, 0};
  return result;
}

std::pair<Matrix, Matrix> propagate_cov_exact(const LinearSdeModel& model, const Matrix& P0,
                                              const Matrix& K, double tau) {
  if (tau < 0.0) throw std::invalid_argument("propagate_cov_exact: tau must be >= 0");
  if (!is_psd(P0, 1e-10)) throw std::invalid_argument("propagate_cov_exact: P0 is not PSD");
  DiscreteMaps maps = discrete_maps(model, tau);
  Matrix Acl = maps.Phi + maps.Gamma * K;
  Matrix P = symmetrize(Acl * symmetrize(P0) * Acl.transpose() + maps.Wn);
  Matrix cross = Acl * symmetrize(P0);
  return {P, cross};
}

ScheduleTrajectory propagate_schedule(const LinearSdeModel& model,
                                      const TriggerSchedule& schedule, const Matrix& K,
                                      const Matrix& P0, int steps_per_interval) {
  schedule.validate();
  const Matrix BK = model.B * K;
  ScheduleTrajectory traj;

  CovState s{Vector::Zero(model.nx()), symmetrize(P0), Matrix()};
  double t = 0.0;
  traj.times.push_back(t);
  traj.P.push_back(s.P);
  traj.cross.push_back(s.P);
  traj.interval_of.push_back(0);

  const Vector v0 = Vector::Zero(model.nu());
  for (int k = 0; k < schedule.horizon(); ++k) {
    const Matrix Pk = s.P;  // trigger-instant covariance, frozen over the interval
    s.C = Pk;               // cross reset
    const double h = schedule.deltas[k] / steps_per_interval;
    for (int i = 0; i < steps_per_interval; ++i) {
      s = rk4_step(model, v0, BK, Pk, s, h);
      t += h;
      traj.times.push_back(t);
      traj.P.push_back(s.P);
      traj.cross.push_back(s.C);
      traj.interval_of.push_back(k);
    }
  }
  return traj;
}

ConditionalSlices propagate_conditional_slices(const LinearSdeModel& model,
                                               const TriggerSchedule& schedule,
                                               const Matrix& K,
                                               const std::vector<int>& slice_indices,
                                               int steps_per_interval) {
  schedule.validate();
  const int N = schedule.horizon();
  const int n = model.nx();
  const Matrix BK = model.B * K;
  const Matrix zero = Matrix::Zero(n, n);
  const Vector v0 = Vector::Zero(model.nu());

  // noise active only inside the slice's own interval
  LinearSdeModel noiseless = model;
  noiseless.Q = zero;

  ConditionalSlices out;
  out.slice_index = slice_indices.empty() ? [&] {
    std::vector<int> all(N);
    for (int i = 0; i < N; ++i) all[i] = i;
    return all;
  }() : slice_indices;

  for (int slice : out.slice_index) {
    if (slice < 0 || slice >= N) {
      throw std::invalid_argument("propagate_conditional_slices: slice index out of range");
    }
  }

  bool first_slice = true;
  for (int slice : out.slice_index) {
    std::vector<Matrix> traj;
    CovState s{Vector::Zero(n), zero, zero};
    double t = 0.0;
    if (first_slice) {
      out.times.push_back(t);
      out.interval_of.push_back(0);
    }
    traj.push_back(s.P);
    for (int k = 0; k < N; ++k) {
      const double h = schedule.deltas[k] / steps_per_interval;
      const Matrix Pk = s.P;  // slice covariance at this trigger
      s.C = Pk;               // per-interval cross reset (zero until slice k ends)
      const LinearSdeModel& dyn = (k == slice) ? model : noiseless;
      const bool frozen = k < slice;  // slice is identically zero before its interval
      for (int i = 0; i < steps_per_interval; ++i) {
        if (!frozen) s = rk4_step(dyn, v0, BK, Pk, s, h);
        t += h;
        if (first_slice) {
          out.times.push_back(t);
          out.interval_of.push_back(k);
        }
        traj.push_back(s.P);
      }
    }
    out.P_slice.push_back(std::move(traj));
    first_slice = false;
  }
  return out;
}

}  // namespace stmpc
