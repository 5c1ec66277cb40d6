#include "stmpc/model.hpp"

#include "stmpc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stmpc {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

void LinearSdeModel::validate() const {
  require(A.rows() > 0 && A.rows() == A.cols(), "model.A must be square and nonempty");
  const int n = nx();
  require(B.rows() == n && B.cols() > 0, "model.B rows must match model.A");
  require(Q.rows() == n && Q.cols() == n, "model.Q must be n_x x n_x");
  require(C.rows() > 0 && C.cols() == n, "model.C cols must match model.A");
  require(is_psd(Q, 1e-10), "model.Q must be positive semidefinite");
}

std::vector<double> TriggerSchedule::trigger_times(double t0) const {
  std::vector<double> t(deltas.size() + 1);
  t[0] = t0;
  for (std::size_t k = 0; k < deltas.size(); ++k) t[k + 1] = t[k] + deltas[k];
  return t;
}

void TriggerSchedule::validate() const {
  require(delta_min > 0.0, "schedule.delta_min must be > 0 (Zeno bound)");
  require(std::isfinite(delta_max) && delta_max >= delta_min,
          "schedule.delta_max must be finite and >= delta_min (freeze bound)");
  for (double d : deltas) {
    require(d >= delta_min - 1e-12 && d <= delta_max + 1e-12,
            "schedule interval outside [delta_min, delta_max]");
  }
}

void ResourceSpec::validate() const {
  require(rho >= 0.0, "resource.rho must be >= 0");
  require(r_min <= r0 && r0 <= r_max, "resource requires r_min <= r0 <= r_max");
  require(eta.constant >= 0.0, "resource.eta constant part must be >= 0");
}

double resource_step(double r, double delta, const ResourceSpec& spec) {
  return std::min(spec.rho * delta + r - spec.eta(delta), spec.r_max);
}

GaussianBelief::GaussianBelief(Vector mu_in, Matrix P_in)
    : mu(std::move(mu_in)), P(symmetrize(P_in)) {}

void GaussianBelief::validate() const {
  require(P.rows() == mu.size() && P.cols() == mu.size(), "belief P must be n_x x n_x");
  require(is_psd(P, 1e-10), "belief covariance must be positive semidefinite");
}

void AffineFeedbackPlan::validate(const LinearSdeModel& model) const {
  schedule.validate();
  require(static_cast<int>(v.size()) == schedule.horizon(),
          "plan must have exactly one nominal input per interval");
  for (const Vector& vk : v) {
    require(vk.size() == model.nu(), "plan nominal input has wrong dimension");
  }
  require(K.rows() == model.nu() && K.cols() == model.nx(),
          "plan gain K must be n_u x n_x");
}

void PolytopicChanceConstraint::validate(const LinearSdeModel& model) const {
  require(epsilon > 0.0 && epsilon <= 0.5, "constraint epsilon must be in (0, 0.5]");
  require(H.size() == h.size() && !H.empty(), "constraint needs matching H/h rows");
  const int dim = target == ConstraintTarget::State ? model.nx() : model.nu();
  for (const Vector& Hi : H) {
    require(Hi.size() == dim, "constraint row dimension mismatch");
    require(Hi.norm() > 0.0, "constraint row H must be nonzero");
  }
}

double PiecewiseConstant::eval(double t) const {
  if (knots.empty()) return 0.0;
  double value = knots.front().second;
  for (const auto& [time, v] : knots) {
    if (t >= time) value = v;
    else break;
  }
  return value;
}

void CostSpec::validate(const LinearSdeModel& model, double t_end) const {
  require(Wy.rows() == model.ny() && Wy.cols() == model.ny(), "cost.Wy must be n_y x n_y");
  require(Wu.rows() == model.nu() && Wu.cols() == model.nu(), "cost.Wu must be n_u x n_u");
  require(is_psd(Wy, 1e-10), "cost.Wy must be positive semidefinite");
  require(is_psd(Wu, 1e-10), "cost.Wu must be positive semidefinite");
  if (Wterm.size() > 0) {
    require(Wterm.rows() == model.ny() && Wterm.cols() == model.ny(),
            "cost.Wterm must be n_y x n_y");
    require(is_psd(Wterm, 1e-10), "cost.Wterm must be positive semidefinite");
  }
  require(!reference.knots.empty(), "cost.reference must have at least one knot");
  for (std::size_t i = 1; i < reference.knots.size(); ++i) {
    require(reference.knots[i].first > reference.knots[i - 1].first,
            "cost.reference knot times must strictly increase");
  }
  // piecewise-constant extension covers any horizon; just anchor the start
  require(reference.knots.front().first <= 0.0 || t_end <= 0.0,
          "cost.reference must be defined from t = 0");
}

void Scenario::validate() const {
  model.validate();
  resource.validate();
  require(horizon_n >= 1, "scenario.horizon must be >= 1");
  require(delta_min > 0.0 && delta_max >= delta_min && std::isfinite(delta_max),
          "scenario delta bounds must satisfy 0 < delta_min <= delta_max < inf");
  require(t_end > 0.0, "scenario.t_end must be > 0");
  require(x0.size() == model.nx(), "scenario.x0 dimension mismatch");
  for (const auto& c : constraints) c.validate(model);
  cost.validate(model, t_end);
}

namespace {

// Match H against +/- each row of C; return the bound h / scale for the
// tightest matching row in the requested direction.
std::pair<double, double> box_from_rows(const std::vector<PolytopicChanceConstraint>& cons,
                                        ConstraintTarget target, const Vector& dir) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  double upper = nan, lower = nan;
  for (const auto& c : cons) {
    if (c.target != target) continue;
    for (int i = 0; i < c.rows(); ++i) {
      const Vector& H = c.H[i];
      // H = alpha * dir?
      double alpha = 0.0;
      bool match = true;
      for (int j = 0; j < dir.size(); ++j) {
        if (std::abs(dir[j]) > 1e-12) {
          double a = H[j] / dir[j];
          if (alpha == 0.0) alpha = a;
          else if (std::abs(a - alpha) > 1e-9 * std::abs(alpha)) { match = false; break; }
        } else if (std::abs(H[j]) > 1e-12) {
          match = false;
          break;
        }
      }
      if (!match || alpha == 0.0) continue;
      double bound = c.h[i] / alpha;
      if (alpha > 0.0) upper = std::isnan(upper) ? bound : std::min(upper, bound);
      else lower = std::isnan(lower) ? bound : std::max(lower, bound);
    }
  }
  return {lower, upper};
}

}  // namespace

std::pair<double, double> Scenario::output_box() const {
  Vector c_row = model.C.row(0).transpose();
  return box_from_rows(constraints, ConstraintTarget::State, c_row);
}

std::pair<double, double> Scenario::input_box() const {
  Vector e0 = Vector::Zero(model.nu());
  e0[0] = 1.0;
  return box_from_rows(constraints, ConstraintTarget::Input, e0);
}

}  // namespace stmpc
