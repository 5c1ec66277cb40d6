#include "stmpc/closed_loop.hpp"

#include "stmpc/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace stmpc {

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

std::vector<Vector> simulate_interval(const LinearSdeModel& model, const Vector& x0,
                                      const Vector& u, double tau, int steps,
                                      const NoiseStreamKey& key, std::uint32_t sample,
                                      std::uint32_t step_base, SimKernel kernel) {
  if (steps < 1) throw std::invalid_argument("simulate_interval: steps must be >= 1");
  if (tau <= 0.0) throw std::invalid_argument("simulate_interval: tau must be > 0");
  const int nx = model.nx();
  const Matrix L = psd_factor(model.Q);
  const Vector b = model.B * u;

  EmBatch batch = EmBatch::make(nx, 1, sample, key);
  for (int c = 0; c < nx; ++c) {
    batch.x[c] = x0[c];
    batch.drift[c] = b[c];
  }
  const double h = tau / steps;
  std::vector<Vector> path;
  path.reserve(steps + 1);
  path.push_back(x0);
  for (int i = 0; i < steps; ++i) {
    em_steps(batch, model.A, L, h, 1, step_base + static_cast<std::uint32_t>(i), kernel);
    Vector x(nx);
    for (int c = 0; c < nx; ++c) x[c] = batch.x[c];
    path.push_back(x);
  }
  return path;
}

namespace {

// Single-path simulator that lands exactly on the dense logging grid.
class PathSim {
public:
  PathSim(const LinearSdeModel& model, const Vector& x0, const NoiseStreamKey& key,
          std::uint32_t sample, const SimOptions& opts)
      : model_(model), noise_factor_(psd_factor(model.Q)), opts_(opts),
        batch_(EmBatch::make(model.nx(), 1, sample, key)) {
    for (int c = 0; c < model_.nx(); ++c) batch_.x[c] = x0[c];
  }

  double time() const { return t_; }

  Vector state() const {
    Vector x(model_.nx());
    for (int c = 0; c < model_.nx(); ++c) x[c] = batch_.x[c];
    return x;
  }

  /// Hold input u for `delta` seconds (clipped at t_stop), recording dense
  /// grid points into `log`.
  void hold(const Vector& u, double delta, double resource, double current_delta,
            const PiecewiseConstant& ref, double t_stop, TrajectoryLog* log) {
    const Vector b = model_.B * u;
    for (int c = 0; c < model_.nx(); ++c) batch_.drift[c] = b[c];
    const double t_end = std::min(t_ + delta, t_stop);
    const double stride = opts_.log_stride;
    while (t_ < t_end - 1e-12) {
      const double next_grid = stride * (std::floor(t_ / stride + 1e-9) + 1.0);
      const double target = std::min(t_end, next_grid);
      const double seg = target - t_;
      const int n = std::max(1, static_cast<int>(std::ceil(seg / opts_.em_step - 1e-9)));
      em_steps(batch_, model_.A, noise_factor_, seg / n, n, step_counter_, opts_.kernel);
      step_counter_ += static_cast<std::uint32_t>(n);
      t_ = target;
      if (log && std::abs(target - next_grid) < 1e-9 && target <= t_end + 1e-12) {
        log->dense.push_back(make_record(u, resource, current_delta, ref));
      }
    }
  }

  DenseRecord make_record(const Vector& u, double resource, double current_delta,
                          const PiecewiseConstant& ref) const {
    DenseRecord rec;
    rec.t = t_;
    rec.x = state();
    rec.u = u;
    rec.y = (model_.C * rec.x)(0);
    rec.ref = ref.eval(t_);
    rec.resource = resource;
    rec.delta = current_delta;
    return rec;
  }

private:
  const LinearSdeModel& model_;
  Matrix noise_factor_;
  SimOptions opts_;
  EmBatch batch_;
  double t_ = 0.0;
  std::uint32_t step_counter_ = 0;
};

void fill_log_bounds(TrajectoryLog& log, const Scenario& sc) {
  const auto [ylo, yhi] = sc.output_box();
  log.y_min = ylo;
  log.y_max = yhi;
  log.r_min = sc.resource.r_min;
  log.r_max = sc.resource.r_max;
  log.dt_min = sc.delta_min;
  log.dt_max = sc.delta_max;
}

}  // namespace

TrajectoryLog apply_plan_open_loop(const LinearSdeModel& model, const AffineFeedbackPlan& plan,
                                   const Vector& x0, const std::vector<Vector>& mus,
                                   const NoiseStreamKey& key, const SimOptions& opts) {
  plan.validate(model);
  if (mus.size() < plan.v.size()) {
    throw std::invalid_argument("apply_plan_open_loop: need one mean per trigger");
  }
  TrajectoryLog log;
  PiecewiseConstant no_ref;
  no_ref.knots.emplace_back(0.0, 0.0);
  PathSim sim(model, x0, key, 0, opts);
  const double t_total = plan.schedule.trigger_times(0.0).back();
  log.dense.push_back(sim.make_record(Vector::Zero(model.nu()), 0.0, plan.schedule.deltas[0],
                                      no_ref));
  for (std::size_t k = 0; k < plan.v.size(); ++k) {
    const Vector xk = sim.state();
    const Vector u = plan.v[k] + plan.K * (xk - mus[k]);
    TriggerRecord tr;
    tr.t = sim.time();
    tr.x = xk;
    tr.u = u;
    tr.delta = plan.schedule.deltas[k];
    tr.solve_status = "open-loop";
    log.triggers.push_back(tr);
    sim.hold(u, plan.schedule.deltas[k], 0.0, plan.schedule.deltas[k], no_ref, t_total, &log);
  }
  return log;
}

EnsembleMoments ensemble_open_loop(const LinearSdeModel& model, const AffineFeedbackPlan& plan,
                                   const Vector& x0, const std::vector<Vector>& mus,
                                   int samples, std::uint64_t seed, int steps_per_interval,
                                   int threads, SimKernel kernel) {
  plan.validate(model);
  if (samples < 1) throw std::invalid_argument("ensemble_open_loop: samples must be >= 1");
  const int nx = model.nx();
  const int N = plan.schedule.horizon();
  const Matrix L = psd_factor(model.Q);

  // fixed chunking keeps the reduction order independent of thread count
  const int chunk_size = 8192;
  const int n_chunks = (samples + chunk_size - 1) / chunk_size;

  struct ChunkMoments {
    std::vector<Vector> sum;
    std::vector<Matrix> sum2;
  };
  std::vector<ChunkMoments> partial(n_chunks);

  std::atomic<int> next_chunk{0};
  auto worker = [&]() {
    for (;;) {
      const int ci = next_chunk.fetch_add(1);
      if (ci >= n_chunks) break;
      const int begin = ci * chunk_size;
      const int count = std::min(chunk_size, samples - begin);
      EmBatch batch = EmBatch::make(nx, count, static_cast<std::uint32_t>(begin),
                                    NoiseStreamKey{seed, 0});
      for (int c = 0; c < nx; ++c) {
        for (int s = 0; s < count; ++s) batch.x[c * count + s] = x0[c];
      }
      ChunkMoments cm;
      cm.sum.assign(N + 1, Vector::Zero(nx));
      cm.sum2.assign(N + 1, Matrix::Zero(nx, nx));
      auto accumulate = [&](int trigger) {
        Vector x(nx);
        for (int s = 0; s < count; ++s) {
          for (int c = 0; c < nx; ++c) x[c] = batch.x[c * count + s];
          cm.sum[trigger] += x;
          cm.sum2[trigger] += x * x.transpose();
        }
      };
      accumulate(0);
      std::uint32_t step_base = 0;
      for (int k = 0; k < N; ++k) {
        // per-sample held input drift: B (v_k + K (x_s - mu_k))
        Vector x(nx);
        for (int s = 0; s < count; ++s) {
          for (int c = 0; c < nx; ++c) x[c] = batch.x[c * count + s];
          const Vector u = plan.v[k] + plan.K * (x - mus[k]);
          const Vector b = model.B * u;
          for (int c = 0; c < nx; ++c) batch.drift[c * count + s] = b[c];
        }
        const double h = plan.schedule.deltas[k] / steps_per_interval;
        em_steps(batch, model.A, L, h, steps_per_interval, step_base, kernel);
        step_base += static_cast<std::uint32_t>(steps_per_interval);
        accumulate(k + 1);
      }
      partial[ci] = std::move(cm);
    }
  };

  const int nthreads = std::min(resolve_threads(threads), n_chunks);
  std::vector<std::thread> pool;
  for (int i = 1; i < nthreads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  EnsembleMoments out;
  out.samples = samples;
  out.times = plan.schedule.trigger_times(0.0);
  out.mean.assign(N + 1, Vector::Zero(nx));
  out.cov.assign(N + 1, Matrix::Zero(nx, nx));
  for (int t = 0; t <= N; ++t) {
    Vector sum = Vector::Zero(nx);
    Matrix sum2 = Matrix::Zero(nx, nx);
    for (int ci = 0; ci < n_chunks; ++ci) {
      sum += partial[ci].sum[t];
      sum2 += partial[ci].sum2[t];
    }
    out.mean[t] = sum / samples;
    if (samples > 1) {
      out.cov[t] = (sum2 - sum * sum.transpose() / samples) / (samples - 1);
    }
  }
  return out;
}

TrajectoryLog run_closed_loop(const Scenario& scenario, double t_end, std::uint64_t seed,
                              const SimOptions& opts) {
  scenario.validate();
  const LinearSdeModel& model = scenario.model;
  const int N = scenario.horizon_n;

  TrajectoryLog log;
  fill_log_bounds(log, scenario);

  PathSim sim(model, scenario.x0, NoiseStreamKey{seed, 0}, 0, opts);
  double r = scenario.resource.r0;

  std::optional<AffineFeedbackPlan> held_plan;  // plan the applied input came from
  std::optional<PlanPrediction> held_pred;
  std::vector<double> warm_deltas;
  std::vector<Vector> warm_vs;
  Matrix warm_gain;
  bool have_warm = false;
  WarmStart warm_multipliers;
  bool have_warm_multipliers = false;

  bool first_record = true;
  while (sim.time() < t_end - 1e-9) {
    const double t_now = sim.time();
    const Vector x = sim.state();
    const GaussianBelief belief(x, Matrix::Zero(model.nx(), model.nx()));
    const PiecewiseConstant ref_local = shift_reference(scenario.cost.reference, t_now);

    TranscribedProblem problem(scenario, belief, r, ref_local, opts.transcribe);
    const Vector z0 =
        have_warm ? problem.guess_from(warm_deltas, warm_vs, warm_gain) : problem.initial_guess();

    const auto wall0 = std::chrono::steady_clock::now();
    SolveOptions sopts = opts.solver;
    if (have_warm_multipliers) sopts.warm = &warm_multipliers;
    SolveResult result = solve(problem, z0, sopts);
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0)
            .count();

    AffineFeedbackPlan plan;
    PlanPrediction pred;
    std::string status = to_string(result.status);
    bool solved = false;
    if (result.status == SolveStatus::Converged) {
      std::tie(plan, pred) = extract_plan(problem, result.z, 1e-5, false);
      solved = true;
    } else if (result.constraint_residual <= opts.soft_accept_violation) {
      std::tie(plan, pred) = extract_plan(problem, result.z, 1e-5, false);
      solved = true;
      status += "-soft";
    }

    Vector u;
    double delta = 0.0;
    if (solved) {
      u = plan.v[0];  // exact measurement: the feedback term vanishes at t_k
      delta = plan.schedule.deltas[0];
      held_plan = plan;
      held_pred = pred;
    } else if (held_plan && held_plan->schedule.horizon() >= 2) {
      // receding-horizon fallback: previous solution shifted by one interval
      const AffineFeedbackPlan& hp = *held_plan;
      const Vector mu_pred = held_pred->beliefs[1].mu;
      u = hp.v[1] + hp.K * (x - mu_pred);
      delta = hp.schedule.deltas[1];
      // shift the held plan so repeated failures keep advancing
      AffineFeedbackPlan shifted = hp;
      shifted.v.erase(shifted.v.begin());
      shifted.v.push_back(shifted.v.back());
      shifted.schedule.deltas.erase(shifted.schedule.deltas.begin());
      shifted.schedule.deltas.push_back(shifted.schedule.deltas.back());
      PlanPrediction spred = *held_pred;
      spred.beliefs.erase(spred.beliefs.begin());
      spred.beliefs.push_back(spred.beliefs.back());
      held_plan = shifted;
      held_pred = spred;
      status += "-recovered";
    } else {
      throw std::runtime_error("run_closed_loop: solver failed at t=" +
                               std::to_string(t_now) + " with no plan to fall back on (" +
                               status + ")");
    }

    r = resource_step(r, delta, scenario.resource);

    TriggerRecord tr;
    tr.t = t_now;
    tr.x = x;
    tr.u = u;
    tr.delta = delta;
    tr.resource = r;
    tr.solve_status = status;
    tr.solve_ms = wall_ms;
    tr.iterations = result.iterations;
    log.triggers.push_back(tr);

    if (first_record) {
      log.dense.push_back(sim.make_record(u, r, delta, scenario.cost.reference));
      first_record = false;
    }
    sim.hold(u, delta, r, delta, scenario.cost.reference, t_end, &log);

    if (result.status == SolveStatus::Converged) {
      warm_multipliers = {result.lambda_eq, result.lambda_ineq, result.lambda_lb,
                          result.lambda_ub};
      have_warm_multipliers = true;
    } else {
      have_warm_multipliers = false;
    }

    // warm start for the next trigger: the applied plan shifted by one
    // interval with the terminal entry repeated; states are rebuilt around
    // the next measurement by guess_from
    const AffineFeedbackPlan& src = solved ? plan : *held_plan;
    warm_deltas.clear();
    warm_vs.clear();
    for (int k = 1; k < N; ++k) {
      warm_deltas.push_back(src.schedule.deltas[k]);
      warm_vs.push_back(src.v[k]);
    }
    warm_deltas.push_back(src.schedule.deltas[N - 1]);
    warm_vs.push_back(src.v[N - 1]);
    warm_gain = src.K;
    have_warm = true;
  }
  return log;
}

double realized_cost(const TrajectoryLog& log, const Scenario& scenario) {
  const Matrix& Wy = scenario.cost.Wy;
  const Matrix& Wu = scenario.cost.Wu;
  double total = 0.0;
  for (std::size_t i = 1; i < log.dense.size(); ++i) {
    const auto& a = log.dense[i - 1];
    const auto& b = log.dense[i];
    auto stage = [&](const DenseRecord& rec) {
      Vector err = scenario.model.C * rec.x;
      err[0] -= rec.ref;
      return err.dot(Wy * err) + rec.u.dot(Wu * rec.u);
    };
    total += 0.5 * (stage(a) + stage(b)) * (b.t - a.t);
  }
  return total;
}

MonteCarloResult monte_carlo(const Scenario& scenario, int samples, std::uint64_t base_seed,
                             const SimOptions& opts) {
  if (samples < 1) throw std::invalid_argument("monte_carlo: samples must be >= 1");
  MonteCarloResult result;
  result.logs.resize(samples);
  result.stats.sample_errors.assign(samples, std::string());

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int s = next.fetch_add(1);
      if (s >= samples) break;
      try {
        result.logs[s] = run_closed_loop(scenario, scenario.t_end,
                                         base_seed + static_cast<std::uint64_t>(s), opts);
      } catch (const std::exception& e) {
        result.stats.sample_errors[s] = e.what();
      }
    }
  };
  const int nthreads = std::min(resolve_threads(opts.threads), samples);
  std::vector<std::thread> pool;
  for (int i = 1; i < nthreads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  // fixed-order aggregation over the shared dense grid
  EnsembleStats& st = result.stats;
  st.sample_count = samples;
  std::size_t grid = 0;
  bool first = true;
  for (const auto& log : result.logs) {
    if (log.dense.empty()) continue;
    grid = first ? log.dense.size() : std::min(grid, log.dense.size());
    first = false;
  }
  if (first) return result;

  const int nx = scenario.model.nx();
  st.times.resize(grid);
  st.mean.assign(grid, Vector::Zero(nx));
  st.cov.assign(grid, Matrix::Zero(nx, nx));

  std::vector<const PolytopicChanceConstraint*> state_groups;
  for (const auto& g : scenario.constraints) {
    if (g.target == ConstraintTarget::State) state_groups.push_back(&g);
  }
  int n_state_rows = 0;
  for (const auto* g : state_groups) n_state_rows += g->rows();
  st.state_violation.assign(n_state_rows, std::vector<double>(grid, 0.0));

  int valid = 0;
  for (int s = 0; s < samples; ++s) {
    if (!st.sample_errors[s].empty()) continue;
    ++valid;
    const auto& log = result.logs[s];
    for (std::size_t t = 0; t < grid; ++t) {
      st.times[t] = log.dense[t].t;
      st.mean[t] += log.dense[t].x;
      int row = 0;
      for (const auto* g : state_groups) {
        for (int i = 0; i < g->rows(); ++i) {
          if (g->H[i].dot(log.dense[t].x) > g->h[i]) st.state_violation[row][t] += 1.0;
          ++row;
        }
      }
    }
  }
  if (valid == 0) return result;
  for (std::size_t t = 0; t < grid; ++t) st.mean[t] /= valid;
  for (auto& rowv : st.state_violation) {
    for (auto& f : rowv) f /= valid;
  }
  for (int s = 0; s < samples; ++s) {
    if (!st.sample_errors[s].empty()) continue;
    const auto& log = result.logs[s];
    for (std::size_t t = 0; t < grid; ++t) {
      const Vector d = log.dense[t].x - st.mean[t];
      st.cov[t] += d * d.transpose();
    }
  }
  if (valid > 1) {
    for (auto& P : st.cov) P /= (valid - 1);
  }
  for (const auto* g : state_groups) {
    for (int i = 0; i < g->rows(); ++i) {
      st.state_row_names.push_back("state H.x<=" + std::to_string(g->h[i]));
    }
  }

  // input rows: overall violation frequency at triggers
  std::vector<const PolytopicChanceConstraint*> input_groups;
  for (const auto& g : scenario.constraints) {
    if (g.target == ConstraintTarget::Input) input_groups.push_back(&g);
  }
  int n_input_rows = 0;
  for (const auto* g : input_groups) n_input_rows += g->rows();
  st.input_violation.assign(n_input_rows, 0.0);
  long total_triggers = 0;
  for (int s = 0; s < samples; ++s) {
    if (!st.sample_errors[s].empty()) continue;
    const auto& log = result.logs[s];
    total_triggers += static_cast<long>(log.triggers.size());
    for (const auto& tr : log.triggers) {
      int row = 0;
      for (const auto* g : input_groups) {
        for (int i = 0; i < g->rows(); ++i) {
          if (g->H[i].dot(tr.u) > g->h[i]) st.input_violation[row] += 1.0;
          ++row;
        }
      }
    }
  }
  if (total_triggers > 0) {
    for (auto& f : st.input_violation) f /= static_cast<double>(total_triggers);
  }
  for (const auto* g : input_groups) {
    for (int i = 0; i < g->rows(); ++i) {
      st.input_row_names.push_back("input H.u<=" + std::to_string(g->h[i]));
    }
  }

  // applied-interval histogram
  st.delta_histogram.assign(20, 0);
  const double span = scenario.delta_max - scenario.delta_min;
  for (int s = 0; s < samples; ++s) {
    if (!st.sample_errors[s].empty()) continue;
    for (const auto& tr : result.logs[s].triggers) {
      int bin = span <= 0.0 ? 0
                            : static_cast<int>((tr.delta - scenario.delta_min) / span * 20.0);
      bin = std::clamp(bin, 0, 19);
      ++st.delta_histogram[bin];
    }
  }
  return result;
}

}  // namespace stmpc
