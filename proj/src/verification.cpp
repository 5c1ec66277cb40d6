#include "stmpc/verification.hpp"

#include "stmpc/chance.hpp"
#include "stmpc/closed_loop.hpp"
#include "stmpc/covariance.hpp"
#include "stmpc/linalg.hpp"
#include "stmpc/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace stmpc {

namespace {

// deterministic uniform stream for instance generation
class InstanceRng {
public:
  explicit InstanceRng(std::uint64_t seed, std::uint32_t instance)
      : key_{seed, 0xC0FFEEu}, instance_(instance) {}

  double uniform(double lo, double hi) {
    if (idx_ % 2 == 0) pair_ = uniform_pair(key_, instance_, idx_ / 2, 7u);
    const double u = pair_[idx_ % 2];
    ++idx_;
    return lo + (hi - lo) * u;
  }

  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform(0.0, 1.0) * (hi - lo + 1)) % (hi - lo + 1);
  }

  Matrix matrix(int r, int c, double lo, double hi) {
    Matrix M(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) M(i, j) = uniform(lo, hi);
    }
    return M;
  }

private:
  NoiseStreamKey key_;
  std::uint32_t instance_;
  std::uint32_t idx_ = 0;
  std::array<double, 2> pair_{};
};

nlohmann::json matrix_json(const Matrix& M) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    j.push_back(row);
  }
  return j;
}

}  // namespace

VerifyReport verify_covprop_oracle(int instances, std::uint64_t seed) {
  VerifyReport rep;
  rep.name = "covprop-oracle";
  rep.pass = true;
  for (int inst = 0; inst < instances; ++inst) {
    InstanceRng rng(seed, static_cast<std::uint32_t>(inst));
    LinearSdeModel model;
    const int nx = rng.uniform_int(1, 4);
    const int nu = rng.uniform_int(1, 2);
    model.A = rng.matrix(nx, nx, -2.0, 2.0);
    model.B = rng.matrix(nx, nu, -2.0, 2.0);
    const Matrix G = rng.matrix(nx, nx, -0.7, 0.7);
    model.Q = G * G.transpose();
    model.C = Matrix::Identity(1, nx);
    const Matrix K = rng.matrix(nu, nx, -1.0, 1.0);
    const Matrix G2 = rng.matrix(nx, nx, -0.5, 0.5);
    const Matrix P0 = G2 * G2.transpose();
    const double tau = rng.uniform(0.05, 1.0);

    const auto [P_exact, C_exact] = propagate_cov_exact(model, P0, K, tau);
    const GaussianBelief b0(Vector::Zero(nx), P0);
    const auto result =
        propagate_cov_closed_loop(model, b0, Vector::Zero(nu), K, tau, 256);

    double worst = 0.0;
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < nx; ++j) {
        const double eP = std::abs(result.belief_end.P(i, j) - P_exact(i, j)) /
                          (1e-6 * std::abs(P_exact(i, j)) + 1e-9);
        const double eC = std::abs(result.cross_end.Ptk(i, j) - C_exact(i, j)) /
                          (1e-6 * std::abs(C_exact(i, j)) + 1e-9);
        worst = std::max({worst, eP, eC});
      }
    }
    // worst is measured in units of the allowed budget; > 1 means out of
    // tolerance
    rep.worst = std::max(rep.worst, worst);
    if (worst > 1.0 && rep.pass) {
      rep.pass = false;
      nlohmann::json j;
      j["instance"] = inst;
      j["A"] = matrix_json(model.A);
      j["B"] = matrix_json(model.B);
      j["Q"] = matrix_json(model.Q);
      j["K"] = matrix_json(K);
      j["P0"] = matrix_json(P0);
      j["tau"] = tau;
      rep.failing_instance = j.dump();
    }
  }
  rep.detail = "worst error "
               + std::to_string(rep.worst) + "x of the 1e-6 relative / 1e-9 floor budget over " +
               std::to_string(instances) + " instances";
  return rep;
}

VerifyReport verify_decomposition(int n_max, int schedules, std::uint64_t seed) {
  VerifyReport rep;
  rep.name = "decomposition-identity";
  rep.pass = true;
  for (int inst = 0; inst < schedules; ++inst) {
    InstanceRng rng(seed ^ 0x5EEDull, static_cast<std::uint32_t>(inst));
    const int nx = rng.uniform_int(1, 3);
    const int nu = rng.uniform_int(1, 2);
    LinearSdeModel model;
    model.A = rng.matrix(nx, nx, -1.5, 1.5);
    model.B = rng.matrix(nx, nu, -1.5, 1.5);
    const Matrix G = rng.matrix(nx, nx, -0.6, 0.6);
    model.Q = G * G.transpose();
    model.C = Matrix::Identity(1, nx);
    const Matrix K = rng.matrix(nu, nx, -1.0, 1.0);

    TriggerSchedule schedule;
    schedule.delta_min = 0.05;
    schedule.delta_max = 0.8;
    const int N = rng.uniform_int(1, n_max);
    for (int k = 0; k < N; ++k) schedule.deltas.push_back(rng.uniform(0.1, 0.8));

    const int steps = 24;
    const auto full = propagate_schedule(model, schedule, K, Matrix::Zero(nx, nx), steps);
    const auto slices = propagate_conditional_slices(model, schedule, K, {}, steps);

    double worst = 0.0;
    for (std::size_t g = 0; g < full.times.size(); ++g) {
      Matrix sum = Matrix::Zero(nx, nx);
      for (const auto& s : slices.P_slice) sum += s[g];
      worst = std::max(worst, (sum - full.P[g]).cwiseAbs().maxCoeff());
    }
    rep.worst = std::max(rep.worst, worst);
    if (worst > 1e-8 && rep.pass) {
      rep.pass = false;
      nlohmann::json j;
      j["instance"] = inst;
      j["A"] = matrix_json(model.A);
      j["K"] = matrix_json(K);
      j["deltas"] = schedule.deltas;
      rep.failing_instance = j.dump();
    }
  }
  rep.detail = "worst max-abs decomposition gap " + std::to_string(rep.worst) + " over " +
               std::to_string(schedules) + " schedules (tolerance 1e-8)";
  return rep;
}

FixedPlanCheck mc_check_instance() {
  FixedPlanCheck c;
  c.model.A = (Matrix(2, 2) << 0, 1, 0, 0).finished();
  c.model.B = (Matrix(2, 1) << 0, 1).finished();
  c.model.Q = 0.01 * Matrix::Identity(2, 2);
  c.model.C = (Matrix(1, 2) << 1, 0).finished();
  c.deltas = {0.3, 0.5, 0.8, 0.4, 0.3, 0.6};
  for (double v : {1.0, -1.0, 0.5, 0.0, -0.5, 1.0}) {
    c.nominal_inputs.push_back(Vector::Constant(1, v));
  }
  c.gain = (Matrix(1, 2) << -3.0, -2.5).finished();
  c.x0 = Vector::Zero(2);
  return c;
}

VerifyReport verify_mc_consistency(int samples, int steps_per_interval, std::uint64_t seed,
                                   int threads) {
  VerifyReport rep;
  rep.name = "montecarlo-covariance-consistency";

  const FixedPlanCheck c = mc_check_instance();
  AffineFeedbackPlan plan;
  plan.schedule.deltas = c.deltas;
  plan.schedule.delta_min = 0.1;
  plan.schedule.delta_max = 0.9;
  plan.v = c.nominal_inputs;
  plan.K = c.gain;

  // predicted means and covariances at the triggers (closed form)
  std::vector<Vector> mus = {c.x0};
  std::vector<Matrix> Ps = {Matrix::Zero(2, 2)};
  for (std::size_t k = 0; k < c.deltas.size(); ++k) {
    mus.push_back(propagate_mean(c.model, mus.back(), plan.v[k], c.deltas[k]));
    const auto [P, Cx] = propagate_cov_exact(c.model, Ps.back(), plan.K, c.deltas[k]);
    Ps.push_back(P);
  }

  const EnsembleMoments mom = ensemble_open_loop(c.model, plan, c.x0, mus, samples, seed,
                                                 steps_per_interval, threads);

  double worst = 0.0;
  int worst_trigger = -1;
  for (std::size_t t = 1; t < mom.times.size(); ++t) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        const double se = std::sqrt((Ps[t](i, i) * Ps[t](j, j) + Ps[t](i, j) * Ps[t](i, j)) /
                                    samples);
        const double dev = std::abs(mom.cov[t](i, j) - Ps[t](i, j)) / (3.0 * se);
        if (dev > worst) {
          worst = dev;
          worst_trigger = static_cast<int>(t);
        }
      }
    }
  }
  rep.worst = worst;
  rep.pass = worst <= 1.0;
  rep.detail = "worst covariance deviation " + std::to_string(worst) +
               "x of the 3-standard-error band (" + std::to_string(samples) + " samples)";
  if (!rep.pass) {
    nlohmann::json j;
    j["trigger"] = worst_trigger;
    j["samples"] = samples;
    j["seed"] = seed;
    rep.failing_instance = j.dump();
  }
  return rep;
}

VerifyReport verify_quantile_roundtrip() {
  VerifyReport rep;
  rep.name = "quantile-roundtrip";
  std::vector<double> ps = {1e-4, 1e-3, 0.01, 0.02425, 0.025};
  for (int i = 1; i <= 39; ++i) ps.push_back(i / 40.0);
  for (double p : {0.975, 0.97575, 0.99, 0.999, 0.9999}) ps.push_back(p);
  double worst = 0.0;
  double at = 0.0;
  for (double p : ps) {
    const double err = std::abs(normal_cdf(normal_quantile(p)) - p);
    if (err > worst) {
      worst = err;
      at = p;
    }
  }
  rep.worst = worst;
  rep.pass = worst <= 1e-9;
  rep.detail = "worst |Phi(z(p)) - p| = " + std::to_string(worst) + " at p = " +
               std::to_string(at) + " (tolerance 1e-9)";
  return rep;
}

}  // namespace stmpc
