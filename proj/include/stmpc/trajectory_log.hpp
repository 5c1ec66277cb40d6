#pragma once

#include "stmpc/model.hpp"

#include <limits>
#include <string>
#include <vector>

namespace stmpc {

struct TriggerRecord {
  double t = 0.0;
  Vector x;        ///< measured state at the trigger
  Vector u;        ///< applied (held) input
  double delta = 0.0;
  double resource = 0.0;  ///< resource after paying for this trigger
  std::string solve_status;
  double solve_ms = 0.0;
  int iterations = 0;
};

struct DenseRecord {
  double t = 0.0;
  Vector x;
  Vector u;        ///< input held at time t
  double y = 0.0;  ///< first output
  double ref = 0.0;
  double resource = 0.0;  ///< held at the last trigger value
  double delta = 0.0;     ///< current interval length
};

/// One closed-loop (or open-loop plan) run: per-trigger records plus dense
/// grid records. The bound fields mirror the column roles of the emitted
/// traces; unknown bounds stay NaN.
struct TrajectoryLog {
  std::vector<TriggerRecord> triggers;
  std::vector<DenseRecord> dense;
  double y_min = std::numeric_limits<double>::quiet_NaN();
  double y_max = std::numeric_limits<double>::quiet_NaN();
  double r_min = std::numeric_limits<double>::quiet_NaN();
  double r_max = std::numeric_limits<double>::quiet_NaN();
  double dt_min = std::numeric_limits<double>::quiet_NaN();
  double dt_max = std::numeric_limits<double>::quiet_NaN();
};

/// CSV with header t,y,ref,ymax,ymin,r,rmax,rmin,dt,dtmax,dtmin ('.' decimal,
/// no locale). One row per dense record.
std::string trajectory_csv(const TrajectoryLog& log);
void write_trajectory_csv(const TrajectoryLog& log, const std::string& path);

/// Structured full-state format: one JSON object per line with t, x, u, y,
/// ref, r, dt.
void write_trajectory_jsonl(const TrajectoryLog& log, const std::string& path);

}  // namespace stmpc
