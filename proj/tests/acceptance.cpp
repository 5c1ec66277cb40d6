// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criterion 10 drives the CLI binary passed as argv[1].

#include "stmpc/chance.hpp"
#include "stmpc/closed_loop.hpp"
#include "stmpc/covariance.hpp"
#include "stmpc/linalg.hpp"
#include "stmpc/rng.hpp"
#include "stmpc/scenario_io.hpp"
#include "stmpc/sqp.hpp"
#include "stmpc/transcription.hpp"
#include "stmpc/verification.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace stmpc;

namespace {

const std::string kScenarioDir = STMPC_SCENARIO_DIR;
int failures = 0;

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void report(int criterion, bool pass, const std::string& detail, double seconds) {
  std::printf("[%s] criterion %2d: %s (%.1f s)\n", pass ? "PASS" : "FAIL", criterion,
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// --- criterion 1: RK4 vs closed-form covariance propagation ---------------
void criterion_1() {
  Stopwatch sw;
  const auto rep = verify_covprop_oracle(100, 0xACC1);
  const double t = sw.seconds();
  report(1, rep.pass && t < 5.0, "closed-form vs RK4 propagation: " + rep.detail, t);
}

// --- criterion 2: conditional covariance decomposition identity ------------
void criterion_2() {
  Stopwatch sw;
  const auto rep = verify_decomposition(6, 20, 0xACC2);
  const double t = sw.seconds();
  report(2, rep.pass && t < 5.0, "decomposition identity: " + rep.detail, t);
}

// --- criterion 3: Monte Carlo covariance consistency -----------------------
void criterion_3() {
  Stopwatch sw;
  const auto rep = verify_mc_consistency(100000, 1024, 0xACC3, 2);
  const double t = sw.seconds();
  report(3, rep.pass && t < 120.0, "Monte Carlo vs covariance law: " + rep.detail, t);
}

// --- criterion 4: first-interval prediction is gain-independent ------------
void criterion_4() {
  Stopwatch sw;
  LinearSdeModel m;
  m.A = (Matrix(2, 2) << 0, 1, 0, 0).finished();
  m.B = (Matrix(2, 1) << 0, 1).finished();
  m.Q = 0.01 * Matrix::Identity(2, 2);
  m.C = (Matrix(1, 2) << 1, 0).finished();
  const GaussianBelief b0(Vector::Zero(2), Matrix::Zero(2, 2));
  const auto base = propagate_cov_closed_loop(m, b0, Vector::Zero(1), Matrix::Zero(1, 2),
                                              0.6, 64);
  double worst = 0.0;
  NoiseStreamKey key{0xACC4, 0};
  for (std::uint32_t i = 0; i < 10; ++i) {
    Matrix K(1, 2);
    const auto u = uniform_pair(key, i, 0, 0);
    K << 10.0 * (u[0] - 0.5), 10.0 * (u[1] - 0.5);
    const auto res = propagate_cov_closed_loop(m, b0, Vector::Zero(1), K, 0.6, 64);
    worst = std::max(worst, (res.belief_end.P - base.belief_end.P).cwiseAbs().maxCoeff());
  }
  report(4, worst <= 1e-10,
         "first-interval covariance spread over 10 random gains = " + fmt(worst) +
             " (tolerance 1e-10)",
         sw.seconds());
}

// --- criterion 5: quantile value and sampled violation frequency -----------
void criterion_5() {
  Stopwatch sw;
  const double z99 = normal_quantile(0.99);
  const bool quantile_ok = std::abs(z99 - 2.326348) <= 1e-5;

  Matrix P(2, 2);
  P << 0.05, 0.01, 0.01, 0.02;
  Vector H(2);
  H << 1.0, -0.5;
  const double eps = 0.01;
  const auto row = tighten_state_row(H, 0.3, eps, P);
  Vector mu(2);
  mu << row.h_tight / H[0], 0.0;
  const Matrix L = psd_factor(P);
  const int M = 100000;
  NoiseStreamKey key{0xACC5, 1};
  int violations = 0;
  for (std::uint32_t i = 0; i < M; ++i) {
    const auto xi = normal_pair(key, i, 0, 0);
    Vector x = mu + L * (Vector(2) << xi[0], xi[1]).finished();
    if (H.dot(x) > 0.3) ++violations;
  }
  const double freq = static_cast<double>(violations) / M;
  const double band = eps + 3.0 * std::sqrt(eps * (1.0 - eps) / M);
  report(5, quantile_ok && freq <= band,
         "quantile(0.99) = " + fmt(z99) + ", sampled violation " + fmt(freq) +
             " <= " + fmt(band),
         sw.seconds());
}

// --- criterion 6: deterministic degeneracy ---------------------------------
void criterion_6() {
  Stopwatch sw;
  Scenario sc = load_scenario(kScenarioDir + "/deterministic.json");
  sc.horizon_n = 6;
  SimOptions det;
  det.solver.max_iterations = 300;
  SimOptions stoch = det;
  stoch.transcribe.force_covariance = 1;
  const auto log_a = run_closed_loop(sc, 10.0, 3, stoch);
  const auto log_b = run_closed_loop(sc, 10.0, 3, det);
  const double ca = realized_cost(log_a, sc);
  const double cb = realized_cost(log_b, sc);
  const double rel = std::abs(ca - cb) / std::max(1.0, std::abs(cb));
  report(6, rel <= 1e-5,
         "zero-diffusion controller vs deterministic transcription: realized costs " +
             fmt(ca) + " / " + fmt(cb) + ", relative gap " + fmt(rel),
         sw.seconds());
}

// --- criterion 7: dangerous-case qualitative reproduction ------------------
void criterion_7() {
  Stopwatch sw;
  Scenario sc = load_scenario(kScenarioDir + "/danger.json");
  sc.horizon_n = 8;  // reproduction parameters fixed by the scenario; the
                     // horizon is a solver knob kept at desk scale
  SimOptions opts;
  opts.threads = 2;
  opts.log_stride = 0.05;
  const int samples = 100;
  const MonteCarloResult mc = monte_carlo(sc, samples, 2026, opts);

  int failed_samples = 0;
  for (const auto& e : mc.stats.sample_errors) failed_samples += !e.empty();

  // (a) per-time empirical frequency of y > 1
  double worst_freq = 0.0;
  for (std::size_t t = 0; t < mc.stats.times.size(); ++t) {
    worst_freq = std::max(worst_freq, mc.stats.state_violation[0][t]);
  }

  // (b) median applied interval while the reference sits at the bound
  std::vector<double> bound_deltas;
  // (c) resource level by phase
  double r_bound = 0.0, r_easy = 0.0;
  long n_bound = 0, n_easy = 0;
  for (const auto& log : mc.logs) {
    for (const auto& tr : log.triggers) {
      if (sc.cost.reference.eval(tr.t) > 0.5) bound_deltas.push_back(tr.delta);
    }
    for (const auto& rec : log.dense) {
      if (rec.ref > 0.5) {
        r_bound += rec.resource;
        ++n_bound;
      } else {
        r_easy += rec.resource;
        ++n_easy;
      }
    }
  }
  std::sort(bound_deltas.begin(), bound_deltas.end());
  const double median_delta =
      bound_deltas.empty() ? 1e9 : bound_deltas[bound_deltas.size() / 2];
  r_bound /= std::max(1L, n_bound);
  r_easy /= std::max(1L, n_easy);

  const double t = sw.seconds();
  const bool pass = failed_samples == 0 && worst_freq <= 0.03 &&
                    median_delta <= 1.5 * sc.delta_min && r_easy > r_bound && t < 600.0;
  report(7, pass,
         "dangerous case over " + std::to_string(samples) + " runs: worst P(y>1) = " +
             fmt(worst_freq) + " (<= 0.03), median at-bound interval " + fmt(median_delta) +
             " (<= " + fmt(1.5 * sc.delta_min) + "), resource off-bound " + fmt(r_easy) +
             " > at-bound " + fmt(r_bound) + ", " + std::to_string(failed_samples) +
             " failed samples",
         t);
}

// --- criterion 8: safe-case qualitative reproduction -----------------------
void criterion_8() {
  Stopwatch sw;
  Scenario sc = load_scenario(kScenarioDir + "/safe.json");
  sc.horizon_n = 8;
  SimOptions opts;
  opts.threads = 2;
  opts.log_stride = 0.05;
  const MonteCarloResult mc = monte_carlo(sc, 5, 808, opts);

  // settled windows: 1.5 s after each switch, ending 1.5 s before the next
  // (the planner starts spending ahead of an anticipated reference step)
  const double switches[4] = {0.0, 5.0, 10.0, 15.0};
  double tracking_err = 0.0;
  long n_err = 0;
  int trending_up = 0;
  int windows = 0;
  for (int w = 0; w < 4; ++w) {
    const double lo = switches[w] + 1.5;
    const double hi = switches[w] + 3.5;
    double first = 0.0, second = 0.0;
    long nf = 0, nsec = 0;
    for (const auto& log : mc.logs) {
      for (const auto& rec : log.dense) {
        if (rec.t < lo || rec.t >= hi) continue;
        tracking_err += std::abs(rec.y - rec.ref);
        ++n_err;
        if (rec.t < 0.5 * (lo + hi)) {
          first += rec.resource;
          ++nf;
        } else {
          second += rec.resource;
          ++nsec;
        }
      }
    }
    if (nf == 0 || nsec == 0) continue;
    ++windows;
    if (second / nsec >= first / nf - 0.02) ++trending_up;
  }
  const double mean_err = tracking_err / std::max(1L, n_err);
  const bool pass = mean_err <= 0.05 && windows == 4 && trending_up >= 3;
  report(8, pass,
         "safe case: settled tracking error " + fmt(mean_err) +
             " (<= 0.05), resource non-decreasing in " + std::to_string(trending_up) + "/4 " +
             "settled windows",
         sw.seconds());
}

// --- criterion 9: solver unit suite + derivative checker -------------------
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
    g << -2.0 * (1.0 - z[0]) - 400.0 * z[0] * b, 200.0 * b;
    return g;
  }
  void equalities(const Vector&, Vector&, Matrix*) const override {}
  void inequalities(const Vector&, Vector&, Matrix*) const override {}
};

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

void criterion_9() {
  Stopwatch sw;
  bool pass = true;
  std::string detail;

  {
    Rosenbrock p;
    Vector z0(2);
    z0 << -1.2, 1.0;
    const auto r = solve(p, z0);
    pass = pass && r.status == SolveStatus::Converged && r.kkt_residual <= 1e-6 &&
           std::abs(r.z[0] - 1.0) <= 1e-6;
    detail += "rosenbrock kkt " + fmt(r.kkt_residual);
  }
  {
    BoundQuadratic p;
    const auto r = solve(p, Vector::Constant(1, 4.0));
    pass = pass && r.status == SolveStatus::Converged && r.kkt_residual <= 1e-6;
    detail += ", bound-QP kkt " + fmt(r.kkt_residual);
  }
  {
    EqualityQuadratic p;
    Vector z0(2);
    z0 << 4.0, -2.0;
    const auto r = solve(p, z0);
    pass = pass && r.status == SolveStatus::Converged && r.kkt_residual <= 1e-6 &&
           std::abs(r.z[0] - 0.5) <= 1e-6;
    detail += ", equality-QP kkt " + fmt(r.kkt_residual);
  }
  {
    const Scenario sc = load_scenario(kScenarioDir + "/danger.json");
    const GaussianBelief b(sc.x0, Matrix::Zero(2, 2));
    TranscribedProblem p(sc, b, sc.resource.r0, sc.cost.reference);
    const double err = check_derivatives(p, p.initial_guess(), 1e-6);
    pass = pass && err <= 1e-5;
    detail += ", derivative check " + fmt(err) + " (<= 1e-5)";
  }
  report(9, pass, detail, sw.seconds());
}

// --- criterion 10: byte-identical repeated simulation -----------------------
std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_10(const std::string& cli) {
  Stopwatch sw;
  if (cli.empty()) {
    report(10, false, "no CLI binary supplied", sw.seconds());
    return;
  }
  std::system("rm -rf acceptance_out");
  const std::string flags = " simulate " + kScenarioDir +
                            "/danger.json --seed 7 --t-end 5 --horizon 6 --out-dir ";
  const int rc1 = std::system((cli + flags + "acceptance_out/a >/dev/null 2>&1").c_str());
  const int rc2 = std::system((cli + flags + "acceptance_out/b >/dev/null 2>&1").c_str());
  const std::string a = slurp("acceptance_out/a/trace.csv");
  const std::string b = slurp("acceptance_out/b/trace.csv");
  const bool pass =
      WEXITSTATUS(rc1) == 0 && WEXITSTATUS(rc2) == 0 && !a.empty() && a == b;
  report(10, pass,
         "two `simulate danger --seed 7` runs produce byte-identical CSV (" +
             std::to_string(a.size()) + " bytes)",
         sw.seconds());
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10(cli);
  if (failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria failed\n", failures);
  return 1;
}
