#include "stmpc/trajectory_log.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace stmpc {

namespace {

void append_num(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  out += buf;
}

}  // namespace

std::string trajectory_csv(const TrajectoryLog& log) {
  std::string out = "t,y,ref,ymax,ymin,r,rmax,rmin,dt,dtmax,dtmin\n";
  for (const auto& rec : log.dense) {
    append_num(out, rec.t);
    out += ',';
    append_num(out, rec.y);
    out += ',';
    append_num(out, rec.ref);
    out += ',';
    append_num(out, log.y_max);
    out += ',';
    append_num(out, log.y_min);
    out += ',';
    append_num(out, rec.resource);
    out += ',';
    append_num(out, log.r_max);
    out += ',';
    append_num(out, log.r_min);
    out += ',';
    append_num(out, rec.delta);
    out += ',';
    append_num(out, log.dt_max);
    out += ',';
    append_num(out, log.dt_min);
    out += '\n';
  }
  return out;
}

void write_trajectory_csv(const TrajectoryLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write trace file: " + path);
  f << trajectory_csv(log);
}

void write_trajectory_jsonl(const TrajectoryLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write state file: " + path);
  auto vec = [](const Vector& v) {
    std::string s = "[";
    char buf[40];
    for (int i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      s += buf;
      if (i + 1 < v.size()) s += ',';
    }
    return s + "]";
  };
  for (const auto& rec : log.dense) {
    char head[160];
    std::snprintf(head, sizeof(head), "{\"t\":%.12g,\"y\":%.17g,\"ref\":%.12g,\"r\":%.12g,\"dt\":%.12g,", rec.t,
                  rec.y, rec.ref, rec.resource, rec.delta);
    f << head << "\"x\":" << vec(rec.x) << ",\"u\":" << vec(rec.u) << "}\n";
  }
}

}  // namespace stmpc
