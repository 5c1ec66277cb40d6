// Drives the built CLI end to end: exit codes, artifact layout, manifest
// reproducibility, byte-identical traces.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    ++failures;
    std::cerr << "[FAIL] " << what << "\n";
  } else {
    std::cout << "[ok] " << what << "\n";
  }
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: test_cli <stmpc-binary>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::string scen = STMPC_SCENARIO_DIR;
  const std::string out = "cli_test_out";
  std::system(("rm -rf " + out).c_str());

  // exit code 2 on unparsable scenario
  expect(run(cli + " simulate /nonexistent.json") == 2, "missing scenario exits 2");
  {
    std::ofstream bad(out + "_bad.json");
    bad << "{ not json";
  }
  expect(run(cli + " simulate " + out + "_bad.json") == 2, "malformed scenario exits 2");
  expect(run(cli + " verify nosuchsuite") == 2, "unknown verify suite exits 2");

  // verification suites
  expect(run(cli + " verify quantile --out-dir " + out + "/vq") == 0, "verify quantile passes");
  expect(run(cli + " verify decomposition --n 5 --out-dir " + out + "/vd") == 0,
         "verify decomposition passes");

  // determinism: identical invocations produce byte-identical traces
  const std::string sim_flags =
      " simulate " + scen + "/danger.json --seed 7 --t-end 2 --horizon 5 --out-dir ";
  expect(run(cli + sim_flags + out + "/a") == 0, "simulate danger exits 0");
  expect(run(cli + sim_flags + out + "/b") == 0, "second simulate exits 0");
  const std::string trace_a = slurp(out + "/a/trace.csv");
  expect(!trace_a.empty(), "trace.csv written");
  expect(trace_a == slurp(out + "/b/trace.csv"), "same seed gives byte-identical CSV");
  expect(contains(trace_a, "t,y,ref,ymax,ymin,r,rmax,rmin,dt,dtmax,dtmin"),
         "trace carries the documented header");
  expect(!slurp(out + "/a/states.jsonl").empty(), "full-state log written");

  // manifest: written once, and sufficient to reproduce the invocation
  const std::string manifest = slurp(out + "/a/manifest.json");
  expect(contains(manifest, "\"command\": \"simulate\""), "manifest records the command");
  expect(contains(manifest, "\"seed\": 7"), "manifest records the seed");
  expect(contains(manifest, "\"t-end\""), "manifest records overrides");
  expect(run(cli + sim_flags + out + "/c") == 0, "re-run from manifest data");
  expect(trace_a == slurp(out + "/c/trace.csv"), "manifest re-run reproduces bytes");

  // plan on the deterministic scenario: K must be exactly zero
  expect(run(cli + " plan " + scen + "/deterministic.json --horizon 5 --out-dir " + out +
             "/plan_det") == 0,
         "plan deterministic exits 0");
  const std::string plan_det = slurp(out + "/plan_det/plan.json");
  expect(contains(plan_det, "\"K\": [\n    [\n      0.0,\n      0.0\n    ]\n  ]") ||
             contains(plan_det, "\"K\":[[0.0,0.0]]"),
         "deterministic plan has zero gain");
  expect(!slurp(out + "/plan_det/prediction.csv").empty(), "prediction table written");
  expect(!slurp(out + "/plan_det/solver_log.jsonl").empty(), "solver log written");

  // horizon override honored and recorded
  expect(run(cli + " plan " + scen + "/danger.json --horizon 6 --out-dir " + out +
             "/plan6") == 0,
         "plan with horizon override exits 0");
  const std::string plan6 = slurp(out + "/plan6/plan.json");
  int delta_count = 0;
  {
    const auto pos = plan6.find("\"deltas\"");
    const auto end = plan6.find(']', pos);
    for (auto i = pos; i < end; ++i) delta_count += plan6[i] == ',';
  }
  expect(delta_count == 5, "plan has exactly 6 intervals");
  expect(contains(slurp(out + "/plan6/manifest.json"), "\"horizon\": \"6\""),
         "manifest records the horizon override");

  // montecarlo artifacts
  expect(run(cli + " montecarlo " + scen + "/safe.json --samples 2 --t-end 1.5 --horizon 5"
             " --threads 2 --out-dir " + out + "/mc") == 0,
         "montecarlo exits 0");
  expect(!slurp(out + "/mc/sample_000.csv").empty(), "per-sample trace 0 written");
  expect(!slurp(out + "/mc/sample_001.csv").empty(), "per-sample trace 1 written");
  const std::string stats = slurp(out + "/mc/stats.json");
  expect(contains(stats, "state_violation"), "stats carry violation frequencies");
  expect(contains(stats, "delta_histogram"), "stats carry the interval histogram");

  if (failures == 0) {
    std::cout << "all cli checks passed\n";
    return 0;
  }
  std::cerr << failures << " cli checks failed\n";
  return 1;
}
