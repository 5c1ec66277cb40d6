#include "stmpc/scenario_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace stmpc {

using nlohmann::json;

namespace {

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw ValidationError("matrix must be a nested (row-major) array");
  }
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.front().size());
  Matrix M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) {
      throw ValidationError("matrix rows must have equal length");
    }
    for (int c = 0; c < cols; ++c) M(i, c) = j[i][c].get<double>();
  }
  return M;
}

json matrix_to_json(const Matrix& M) {
  json j = json::array();
  for (int i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (int c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    j.push_back(row);
  }
  return j;
}

Vector vector_from_json(const json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
  return v;
}

json vector_to_json(const Vector& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.name = j.value("name", std::string("scenario"));

  const json& jm = j.at("model");
  s.model.A = matrix_from_json(jm.at("A"));
  s.model.B = matrix_from_json(jm.at("B"));
  s.model.Q = matrix_from_json(jm.at("Q"));
  s.model.C = matrix_from_json(jm.at("C"));

  if (j.contains("resource")) {
    const json& jr = j.at("resource");
    s.resource.rho = jr.value("rho", 1.0);
    s.resource.r_max = jr.value("r_max", 1.0);
    s.resource.r_min = jr.value("r_min", 0.0);
    s.resource.r0 = jr.value("r0", s.resource.r_max);
    if (jr.contains("eta")) {
      const json& je = jr.at("eta");
      if (je.is_number()) {
        s.resource.eta.constant = je.get<double>();
        s.resource.eta.slope = 0.0;
      } else {
        s.resource.eta.constant = je.value("constant", 0.4);
        s.resource.eta.slope = je.value("slope", 0.0);
      }
    }
  }

  s.constraints.clear();
  for (const json& jc : j.value("constraints", json::array())) {
    PolytopicChanceConstraint c;
    const std::string target = jc.value("target", std::string("state"));
    if (target == "state") c.target = ConstraintTarget::State;
    else if (target == "input") c.target = ConstraintTarget::Input;
    else throw ValidationError("constraint target must be \"state\" or \"input\"");
    c.epsilon = jc.value("epsilon", 0.01);
    for (const json& row : jc.at("rows")) {
      c.H.push_back(vector_from_json(row.at("H")));
      c.h.push_back(row.at("h").get<double>());
    }
    s.constraints.push_back(std::move(c));
  }

  const json& jcost = j.at("cost");
  s.cost.Wy = matrix_from_json(jcost.at("Wy"));
  s.cost.Wu = matrix_from_json(jcost.at("Wu"));
  s.cost.Wterm = jcost.contains("Wterm") ? matrix_from_json(jcost.at("Wterm")) : Matrix();
  s.cost.reference.knots.clear();
  for (const json& knot : jcost.at("reference")) {
    s.cost.reference.knots.emplace_back(knot.at(0).get<double>(), knot.at(1).get<double>());
  }

  s.horizon_n = j.value("horizon", 10);
  s.delta_min = j.value("delta_min", 0.1);
  s.delta_max = j.value("delta_max", 0.8);
  s.t_end = j.value("t_end", 20.0);
  s.x0 = vector_from_json(j.at("x0"));
  s.seed = j.value("seed", std::uint64_t{0});
  s.stochastic = j.value("stochastic", true);
  s.tightening = j.value("tightening", true);
  s.delta_preference_weight = j.value("delta_preference_weight", 1e-3);

  s.validate();
  return s;
}

json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["model"] = {{"A", matrix_to_json(s.model.A)},
                {"B", matrix_to_json(s.model.B)},
                {"Q", matrix_to_json(s.model.Q)},
                {"C", matrix_to_json(s.model.C)}};
  j["resource"] = {{"rho", s.resource.rho},
                   {"eta", {{"constant", s.resource.eta.constant}, {"slope", s.resource.eta.slope}}},
                   {"r_max", s.resource.r_max},
                   {"r_min", s.resource.r_min},
                   {"r0", s.resource.r0}};
  j["constraints"] = json::array();
  for (const auto& c : s.constraints) {
    json jc;
    jc["target"] = c.target == ConstraintTarget::State ? "state" : "input";
    jc["epsilon"] = c.epsilon;
    jc["rows"] = json::array();
    for (int i = 0; i < c.rows(); ++i) {
      jc["rows"].push_back({{"H", vector_to_json(c.H[i])}, {"h", c.h[i]}});
    }
    j["constraints"].push_back(jc);
  }
  j["cost"] = {{"Wy", matrix_to_json(s.cost.Wy)}, {"Wu", matrix_to_json(s.cost.Wu)}};
  if (s.cost.Wterm.size() > 0) j["cost"]["Wterm"] = matrix_to_json(s.cost.Wterm);
  j["cost"]["reference"] = json::array();
  for (const auto& [t, v] : s.cost.reference.knots) {
    j["cost"]["reference"].push_back(json::array({t, v}));
  }
  j["horizon"] = s.horizon_n;
  j["delta_min"] = s.delta_min;
  j["delta_max"] = s.delta_max;
  j["t_end"] = s.t_end;
  j["x0"] = vector_to_json(s.x0);
  j["seed"] = s.seed;
  j["stochastic"] = s.stochastic;
  j["tightening"] = s.tightening;
  j["delta_preference_weight"] = s.delta_preference_weight;
  return j;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file: " + path);
  json j;
  in >> j;
  return scenario_from_json(j);
}

void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write scenario file: " + path);
  out << scenario_to_json(s).dump(2) << "\n";
}

}  // namespace stmpc
