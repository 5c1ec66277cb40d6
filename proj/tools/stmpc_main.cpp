// stmpc: plan / simulate / montecarlo / verify for resource-aware stochastic
// self-triggered MPC scenarios.

#include "stmpc/chance.hpp"
#include "stmpc/closed_loop.hpp"
#include "stmpc/linalg.hpp"
#include "stmpc/manifest.hpp"
#include "stmpc/scenario_io.hpp"
#include "stmpc/sqp.hpp"
#include "stmpc/transcription.hpp"
#include "stmpc/verification.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitSolver = 3;
constexpr int kExitVerify = 4;

namespace fs = std::filesystem;
using stmpc::Matrix;
using stmpc::Vector;

std::string default_out_dir() {
  if (const char* env = std::getenv("STMPC_OUT_DIR")) return env;
  return "stmpc-out";
}

nlohmann::json matrix_json(const Matrix& M) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    j.push_back(row);
  }
  return j;
}

nlohmann::json vector_json(const Vector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

struct CommonArgs {
  std::string scenario_path;
  std::string out_dir = default_out_dir();
  std::int64_t seed = -1;        // <0: take from scenario
  double t_end = -1.0;           // <0: take from scenario
  int horizon = -1;              // <0: take from scenario
  int threads = 0;
};

void apply_overrides(stmpc::Scenario& sc, const CommonArgs& args,
                     std::map<std::string, std::string>& overrides) {
  if (args.seed >= 0) {
    sc.seed = static_cast<std::uint64_t>(args.seed);
    overrides["seed"] = std::to_string(args.seed);
  }
  if (args.t_end > 0.0) {
    sc.t_end = args.t_end;
    overrides["t-end"] = std::to_string(args.t_end);
  }
  if (args.horizon > 0) {
    sc.horizon_n = args.horizon;
    overrides["horizon"] = std::to_string(args.horizon);
  }
}

stmpc::RunManifest make_manifest(const std::string& command, const CommonArgs& args,
                                 const std::map<std::string, std::string>& overrides) {
  stmpc::RunManifest m;
  m.command = command;
  m.scenario_path = args.scenario_path;
  m.seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 0;
  m.overrides = overrides;
  m.out_dir = args.out_dir;
  m.tool_version = stmpc::kToolVersion;
  return m;
}

int cmd_plan(const CommonArgs& args) {
  std::map<std::string, std::string> overrides;
  stmpc::Scenario sc = stmpc::load_scenario(args.scenario_path);
  apply_overrides(sc, args, overrides);
  fs::create_directories(args.out_dir);

  stmpc::RunManifest manifest = make_manifest("plan", args, overrides);
  const auto wall0 = std::chrono::steady_clock::now();

  const stmpc::GaussianBelief belief(sc.x0, Matrix::Zero(sc.model.nx(), sc.model.nx()));
  stmpc::TranscribedProblem problem(sc, belief, sc.resource.r0, sc.cost.reference);

  std::ofstream solver_log(fs::path(args.out_dir) / "solver_log.jsonl");
  stmpc::SolveOptions sopts;
  sopts.log = &solver_log;
  const stmpc::SolveResult result = stmpc::solve(problem, problem.initial_guess(), sopts);

  manifest.timings_ms["solve"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0)
          .count();

  std::cout << "solve status: " << stmpc::to_string(result.status)
            << "  objective: " << result.objective << "  kkt: " << result.kkt_residual
            << "  feas: " << result.constraint_residual << "  iters: " << result.iterations
            << "\n";

  const bool ok = result.status == stmpc::SolveStatus::Converged;
  const auto [plan, pred] = stmpc::extract_plan(problem, result.z, 1e-5, false);

  nlohmann::json jp;
  jp["status"] = stmpc::to_string(result.status);
  jp["objective"] = result.objective;
  jp["kkt_residual"] = result.kkt_residual;
  jp["constraint_residual"] = result.constraint_residual;
  jp["iterations"] = result.iterations;
  jp["K"] = matrix_json(plan.K);
  jp["deltas"] = plan.schedule.deltas;
  jp["trigger_times"] = pred.trigger_times;
  jp["resources"] = pred.resources;
  jp["v"] = nlohmann::json::array();
  for (const auto& v : plan.v) jp["v"].push_back(vector_json(v));
  jp["resource_relaxation_exact"] = pred.resource_relaxation_exact;
  jp["max_tightening_violation"] = pred.max_tightening_violation;
  {
    std::ofstream f(fs::path(args.out_dir) / "plan.json");
    f << jp.dump(2) << "\n";
  }

  {
    std::ofstream f(fs::path(args.out_dir) / "prediction.csv");
    const int nx = sc.model.nx();
    f << "t";
    for (int i = 0; i < nx; ++i) f << ",mu" << i;
    for (int i = 0; i < nx; ++i) {
      for (int j = i; j < nx; ++j) f << ",P" << i << j;
    }
    f << ",r\n";
    char buf[40];
    for (std::size_t k = 0; k < pred.beliefs.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.12g", pred.trigger_times[k]);
      f << buf;
      for (int i = 0; i < nx; ++i) {
        std::snprintf(buf, sizeof(buf), ",%.12g", pred.beliefs[k].mu[i]);
        f << buf;
      }
      for (int i = 0; i < nx; ++i) {
        for (int j = i; j < nx; ++j) {
          std::snprintf(buf, sizeof(buf), ",%.12g", pred.beliefs[k].P(i, j));
          f << buf;
        }
      }
      std::snprintf(buf, sizeof(buf), ",%.12g", pred.resources[k]);
      f << buf << "\n";
    }
  }

  manifest.write((fs::path(args.out_dir) / "manifest.json").string());
  return ok ? kExitOk : kExitSolver;
}

int cmd_simulate(const CommonArgs& args) {
  std::map<std::string, std::string> overrides;
  stmpc::Scenario sc = stmpc::load_scenario(args.scenario_path);
  apply_overrides(sc, args, overrides);
  fs::create_directories(args.out_dir);
  stmpc::RunManifest manifest = make_manifest("simulate", args, overrides);

  const auto wall0 = std::chrono::steady_clock::now();
  stmpc::SimOptions opts;
  const stmpc::TrajectoryLog log = stmpc::run_closed_loop(sc, sc.t_end, sc.seed, opts);
  manifest.timings_ms["simulate"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0)
          .count();

  stmpc::write_trajectory_csv(log, (fs::path(args.out_dir) / "trace.csv").string());
  stmpc::write_trajectory_jsonl(log, (fs::path(args.out_dir) / "states.jsonl").string());
  manifest.write((fs::path(args.out_dir) / "manifest.json").string());

  int recovered = 0;
  for (const auto& tr : log.triggers) {
    if (tr.solve_status.find("converged") == std::string::npos) ++recovered;
  }
  std::cout << "simulated " << sc.t_end << " s, " << log.triggers.size() << " triggers, "
            << recovered << " non-nominal solves, realized cost "
            << stmpc::realized_cost(log, sc) << "\n";
  return kExitOk;
}

int cmd_montecarlo(const CommonArgs& args, int samples) {
  std::map<std::string, std::string> overrides;
  stmpc::Scenario sc = stmpc::load_scenario(args.scenario_path);
  apply_overrides(sc, args, overrides);
  overrides["samples"] = std::to_string(samples);
  fs::create_directories(args.out_dir);
  stmpc::RunManifest manifest = make_manifest("montecarlo", args, overrides);

  stmpc::SimOptions opts;
  opts.threads = args.threads;
  const auto wall0 = std::chrono::steady_clock::now();
  const stmpc::MonteCarloResult mc =
      stmpc::monte_carlo(sc, samples, sc.seed, opts);
  manifest.timings_ms["montecarlo"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0)
          .count();

  int failures = 0;
  for (int s = 0; s < samples; ++s) {
    if (!mc.stats.sample_errors[s].empty()) {
      ++failures;
      std::cerr << "sample " << s << " failed: " << mc.stats.sample_errors[s] << "\n";
      continue;
    }
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%03d.csv", s);
    stmpc::write_trajectory_csv(mc.logs[s], (fs::path(args.out_dir) / name).string());
  }

  nlohmann::json js;
  js["samples"] = samples;
  js["failed_samples"] = failures;
  js["times"] = mc.stats.times;
  js["state_rows"] = mc.stats.state_row_names;
  js["state_violation"] = mc.stats.state_violation;
  js["input_rows"] = mc.stats.input_row_names;
  js["input_violation"] = mc.stats.input_violation;
  js["delta_histogram"] = mc.stats.delta_histogram;
  double worst_state_violation = 0.0;
  for (const auto& row : mc.stats.state_violation) {
    for (double f : row) worst_state_violation = std::max(worst_state_violation, f);
  }
  js["worst_state_violation_frequency"] = worst_state_violation;
  {
    std::ofstream f(fs::path(args.out_dir) / "stats.json");
    f << js.dump(2) << "\n";
  }
  manifest.write((fs::path(args.out_dir) / "manifest.json").string());

  std::cout << "montecarlo: " << samples - failures << "/" << samples
            << " samples ok, worst per-time state violation frequency "
            << worst_state_violation << "\n";
  return failures == samples ? kExitSolver : kExitOk;
}

int cmd_verify(const std::string& suite, int n, int instances, int samples, std::int64_t seed,
               int threads, const std::string& out_dir) {
  std::vector<stmpc::VerifyReport> reports;
  const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : 20260809ull;
  if (suite == "covprop" || suite == "all") {
    reports.push_back(stmpc::verify_covprop_oracle(instances, s));
  }
  if (suite == "decomposition" || suite == "all") {
    reports.push_back(stmpc::verify_decomposition(n, 20, s));
  }
  if (suite == "montecarlo" || suite == "all") {
    reports.push_back(stmpc::verify_mc_consistency(samples, 1024, s, threads));
  }
  if (suite == "quantile" || suite == "all") {
    reports.push_back(stmpc::verify_quantile_roundtrip());
  }
  if (reports.empty()) {
    std::cerr << "unknown suite: " << suite
              << " (use covprop|decomposition|montecarlo|quantile|all)\n";
    return kExitUsage;
  }

  bool all_pass = true;
  for (const auto& rep : reports) {
    std::cout << (rep.pass ? "[PASS] " : "[FAIL] ") << rep.name << ": " << rep.detail << "\n";
    if (!rep.pass) {
      all_pass = false;
      if (!rep.failing_instance.empty()) {
        std::cerr << "failing instance: " << rep.failing_instance << "\n";
      }
    }
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    CommonArgs args;
    args.out_dir = out_dir;
    args.seed = static_cast<std::int64_t>(s);
    std::map<std::string, std::string> overrides{{"suite", suite}};
    stmpc::RunManifest manifest = make_manifest("verify", args, overrides);
    manifest.write((fs::path(out_dir) / "manifest.json").string());
  }
  return all_pass ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resource-aware stochastic self-triggered MPC"};
  app.require_subcommand(1);

  CommonArgs plan_args, sim_args, mc_args;
  int mc_samples = 10;

  auto* plan = app.add_subcommand("plan", "solve one optimal control problem");
  plan->add_option("scenario", plan_args.scenario_path, "scenario file")->required();
  plan->add_option("--horizon", plan_args.horizon, "override horizon N");
  plan->add_option("--seed", plan_args.seed, "override seed");
  plan->add_option("--out-dir", plan_args.out_dir, "output directory");

  auto* simulate = app.add_subcommand("simulate", "one closed-loop run, CSV trace");
  simulate->add_option("scenario", sim_args.scenario_path, "scenario file")->required();
  simulate->add_option("--seed", sim_args.seed, "noise stream seed");
  simulate->add_option("--t-end", sim_args.t_end, "simulation end time (s)");
  simulate->add_option("--horizon", sim_args.horizon, "override horizon N");
  simulate->add_option("--out-dir", sim_args.out_dir, "output directory");

  auto* montecarlo = app.add_subcommand("montecarlo", "closed-loop ensemble statistics");
  montecarlo->add_option("scenario", mc_args.scenario_path, "scenario file")->required();
  montecarlo->add_option("--samples", mc_samples, "number of closed-loop samples");
  montecarlo->add_option("--seed", mc_args.seed, "base seed");
  montecarlo->add_option("--t-end", mc_args.t_end, "simulation end time (s)");
  montecarlo->add_option("--horizon", mc_args.horizon, "override horizon N");
  montecarlo->add_option("--threads", mc_args.threads, "worker threads (0 = hardware)");
  montecarlo->add_option("--out-dir", mc_args.out_dir, "output directory");

  std::string verify_suite = "all";
  int verify_n = 6;
  int verify_instances = 100;
  int verify_samples = 20000;
  std::int64_t verify_seed = -1;
  int verify_threads = 0;
  std::string verify_out = default_out_dir();
  auto* verify = app.add_subcommand("verify", "run the analytic verification suites");
  verify->add_option("suite", verify_suite, "covprop|decomposition|montecarlo|quantile|all");
  verify->add_option("--n", verify_n, "max schedule length for the decomposition suite");
  verify->add_option("--instances", verify_instances, "random instances for covprop");
  verify->add_option("--samples", verify_samples, "Monte Carlo samples");
  verify->add_option("--seed", verify_seed, "suite seed");
  verify->add_option("--threads", verify_threads, "worker threads");
  verify->add_option("--out-dir", verify_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_name() == "CallForHelp" ? kExitOk : kExitUsage;
  }

  try {
    if (plan->parsed()) return cmd_plan(plan_args);
    if (simulate->parsed()) return cmd_simulate(sim_args);
    if (montecarlo->parsed()) return cmd_montecarlo(mc_args, mc_samples);
    if (verify->parsed()) {
      return cmd_verify(verify_suite, verify_n, verify_instances, verify_samples, verify_seed,
                        verify_threads, verify_out);
    }
  } catch (const stmpc::ValidationError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitUsage;
}
