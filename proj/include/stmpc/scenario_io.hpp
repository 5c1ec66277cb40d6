#pragma once

#include "stmpc/model.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>

namespace stmpc {

/// Parse and validate a scenario file. Throws ValidationError with the first
/// violated invariant, or nlohmann::json exceptions on malformed input.
Scenario load_scenario(const std::string& path);

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);

void save_scenario(const Scenario& s, const std::string& path);

}  // namespace stmpc
