#include "stmpc/manifest.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace stmpc {

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["scenario"] = scenario_path;
  j["seed"] = seed;
  j["overrides"] = overrides;
  j["out_dir"] = out_dir;
  j["version"] = tool_version;
  j["timings_ms"] = timings_ms;
  return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f << to_json() << "\n";
}

}  // namespace stmpc
