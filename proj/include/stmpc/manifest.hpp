#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace stmpc {

/// Everything needed to re-run one CLI invocation bit-identically. Written
/// exactly once per invocation as <out_dir>/manifest.json.
struct RunManifest {
  std::string command;
  std::string scenario_path;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> overrides;
  std::string out_dir;
  std::string tool_version;
  std::map<std::string, double> timings_ms;

  std::string to_json() const;
  void write(const std::string& path) const;
};

inline constexpr const char* kToolVersion = "stmpc 0.1.0";

}  // namespace stmpc
