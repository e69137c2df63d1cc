#pragma once

#include "rsss/estimate.hpp"
#include "rsss/model.hpp"
#include "rsss/presets.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

namespace rsss {

using Json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfg {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("expected a non-empty matrix");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols) throw ConfigError("ragged matrix");
    for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<size_t>(i)].get<double>();
  return v;
}

inline BoolMatrix bool_matrix_from_json(const Json& j) {
  const Matrix m = matrix_from_json(j);
  return m.array() != 0.0;
}

}  // namespace cfg

inline Json to_json(const ModelSpec& spec) {
  Json j;
  j["o1"] = spec.o1;
  j["u1"] = spec.u1;
  j["o2"] = spec.o2;
  j["u2"] = spec.u2;
  j["loading1"] = {{"values", cfg::matrix_to_json(spec.loading1.value)},
                   {"free", cfg::matrix_to_json(spec.loading1.free.cast<double>())}};
  j["loading2"] = {{"values", cfg::matrix_to_json(spec.loading2.value)},
                   {"free", cfg::matrix_to_json(spec.loading2.free.cast<double>())}};
  j["gamma4_free"] = spec.gamma4_free;
  j["diagonal_dynamics"] = spec.diagonal_dynamics;
  j["shared_lambda1"] = spec.shared_lambda1;
  j["shared_r1"] = spec.shared_r1;
  j["shared_q1"] = spec.shared_q1;
  j["ordered_intercepts"] = spec.ordered_intercepts;
  j["gamma1_free"] = spec.gamma1_free;
  j["gamma1_fixed"] = spec.gamma1_fixed;
  j["p12_free"] = spec.p12_free;
  j["p12_fixed"] = spec.p12_fixed;
  j["p2_free"] = spec.p2_free;
  if (!spec.p2_free) j["p2_fixed"] = cfg::vector_to_json(spec.p2_fixed);
  j["interaction_multi_u2"] = spec.interaction_multi_u2;
  j["initial_regime1_prob"] = spec.initial_regime1_prob;
  return j;
}

inline ModelSpec model_spec_from_json(const Json& j) {
  if (j.contains("preset")) {
    const std::string name = j["preset"].get<std::string>();
    if (name == "study") return presets::study_spec();
    throw ConfigError("unknown model preset: " + name);
  }
  ModelSpec spec;
  try {
    spec.o1 = j.at("o1").get<int>();
    spec.u1 = j.at("u1").get<int>();
    spec.o2 = j.at("o2").get<int>();
    spec.u2 = j.at("u2").get<int>();
    spec.loading1.value = cfg::matrix_from_json(j.at("loading1").at("values"));
    spec.loading1.free = cfg::bool_matrix_from_json(j.at("loading1").at("free"));
    spec.loading2.value = cfg::matrix_from_json(j.at("loading2").at("values"));
    spec.loading2.free = cfg::bool_matrix_from_json(j.at("loading2").at("free"));
    spec.gamma4_free = j.at("gamma4_free").get<std::vector<bool>>();
    spec.diagonal_dynamics = j.value("diagonal_dynamics", true);
    spec.shared_lambda1 = j.value("shared_lambda1", true);
    spec.shared_r1 = j.value("shared_r1", true);
    spec.shared_q1 = j.value("shared_q1", true);
    spec.ordered_intercepts = j.value("ordered_intercepts", true);
    spec.gamma1_free = j.value("gamma1_free", false);
    spec.gamma1_fixed = j.value("gamma1_fixed", 4.60);
    spec.p12_free = j.value("p12_free", false);
    spec.p12_fixed = j.value("p12_fixed", 1e-12);
    spec.p2_free = j.value("p2_free", true);
    if (!spec.p2_free) spec.p2_fixed = cfg::vector_from_json(j.at("p2_fixed"));
    spec.interaction_multi_u2 = j.value("interaction_multi_u2", false);
    spec.initial_regime1_prob = j.value("initial_regime1_prob", 1.0);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid model section: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline Json to_json(const ParameterSet& p) {
  Json j;
  j["lambda1"] = {cfg::matrix_to_json(p.lambda1[0]), cfg::matrix_to_json(p.lambda1[1])};
  j["r1"] = {cfg::vector_to_json(p.r1[0]), cfg::vector_to_json(p.r1[1])};
  j["lambda2"] = cfg::matrix_to_json(p.lambda2);
  j["r2"] = cfg::vector_to_json(p.r2);
  j["p2"] = cfg::vector_to_json(p.p2);
  j["b1"] = {cfg::vector_to_json(p.b1[0]), cfg::vector_to_json(p.b1[1])};
  j["b2"] = {cfg::matrix_to_json(p.b2[0]), cfg::matrix_to_json(p.b2[1])};
  j["b3"] = {cfg::matrix_to_json(p.b3[0]), cfg::matrix_to_json(p.b3[1])};
  j["b4"] = {cfg::matrix_to_json(p.b4[0]), cfg::matrix_to_json(p.b4[1])};
  j["q1"] = {cfg::vector_to_json(p.q1[0]), cfg::vector_to_json(p.q1[1])};
  j["q2"] = cfg::vector_to_json(p.q2);
  j["gamma1"] = p.gamma1;
  j["gamma2"] = cfg::vector_to_json(p.gamma2);
  j["gamma3"] = cfg::vector_to_json(p.gamma3);
  j["gamma4"] = cfg::vector_to_json(p.gamma4);
  j["p12"] = p.p12;
  return j;
}

inline ParameterSet parameter_set_from_json(const Json& j, const ModelSpec& spec) {
  if (j.contains("preset")) {
    const std::string name = j["preset"].get<std::string>();
    if (name == "study") return presets::study_truth();
    throw ConfigError("unknown parameter preset: " + name);
  }
  ParameterSet p = neutral_parameters(spec);
  try {
    for (int s = 0; s < 2; ++s) {
      p.lambda1[s] = cfg::matrix_from_json(j.at("lambda1").at(s));
      p.r1[s] = cfg::vector_from_json(j.at("r1").at(s));
      p.b1[s] = cfg::vector_from_json(j.at("b1").at(s));
      p.b2[s] = cfg::matrix_from_json(j.at("b2").at(s));
      p.b3[s] = cfg::matrix_from_json(j.at("b3").at(s));
      p.b4[s] = cfg::matrix_from_json(j.at("b4").at(s));
      p.q1[s] = cfg::vector_from_json(j.at("q1").at(s));
    }
    p.lambda2 = cfg::matrix_from_json(j.at("lambda2"));
    p.r2 = cfg::vector_from_json(j.at("r2"));
    p.p2 = cfg::vector_from_json(j.at("p2"));
    p.q2 = cfg::vector_from_json(j.at("q2"));
    p.gamma1 = j.at("gamma1").get<double>();
    p.gamma2 = cfg::vector_from_json(j.at("gamma2"));
    p.gamma3 = cfg::vector_from_json(j.at("gamma3"));
    p.gamma4 = cfg::vector_from_json(j.at("gamma4"));
    p.p12 = j.at("p12").get<double>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid parameters section: ") + e.what());
  }
  return p;
}

inline Json to_json(const RpropConfig& c) {
  return Json{{"delta0", c.delta0},
              {"eta_plus", c.eta_plus},
              {"eta_minus", c.eta_minus},
              {"delta_min", c.delta_min},
              {"delta_max", c.delta_max},
              {"patience", c.patience},
              {"tol", c.tol},
              {"n_starts", c.n_starts},
              {"max_iter", c.max_iter},
              {"grad_step", c.grad_step},
              {"start_spread", c.start_spread}};
}

inline RpropConfig rprop_config_from_json(const Json& j) {
  RpropConfig c;
  c.delta0 = j.value("delta0", c.delta0);
  c.eta_plus = j.value("eta_plus", c.eta_plus);
  c.eta_minus = j.value("eta_minus", c.eta_minus);
  c.delta_min = j.value("delta_min", c.delta_min);
  c.delta_max = j.value("delta_max", c.delta_max);
  c.patience = j.value("patience", c.patience);
  c.tol = j.value("tol", c.tol);
  c.n_starts = j.value("n_starts", c.n_starts);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.grad_step = j.value("grad_step", c.grad_step);
  c.start_spread = j.value("start_spread", c.start_spread);
  try {
    c.validate();
  } catch (const ConstraintError& e) {
    throw ConfigError(std::string("invalid optimizer section: ") + e.what());
  }
  return c;
}

/// Declarative run configuration shared by all CLI subcommands.
struct RunConfig {
  ModelSpec spec;
  std::optional<ParameterSet> truth;  // simulation ground truth
  // Data source: either external files...
  std::optional<std::string> y1_path;
  std::optional<std::string> y2_path;
  // ...or a simulation block.
  bool simulate = false;
  int sim_n = 75;
  int sim_t = 50;
  int sim_replications = 1;

  RpropConfig optimizer;
  double cutoff = 0.5;
  int split_t = -1;  // -1 = T/2
  bool extrapolate_forecast = false;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool compute_hessian_se = false;

  Json raw;  // original document, echoed into manifests
};

inline RunConfig parse_run_config(const Json& j) {
  RunConfig cfg;
  cfg.raw = j;
  if (!j.contains("model")) throw ConfigError("config: missing 'model' section");
  cfg.spec = model_spec_from_json(j["model"]);
  if (!j.contains("data")) throw ConfigError("config: missing 'data' section");
  const Json& d = j["data"];
  const bool has_paths = d.contains("y1") || d.contains("y2");
  const bool has_sim = d.contains("simulate");
  if (has_paths == has_sim) {
    throw ConfigError("config: 'data' must have exactly one source "
                      "(y1/y2 paths or a simulate block)");
  }
  if (has_paths) {
    if (!d.contains("y1") || !d.contains("y2")) {
      throw ConfigError("config: both data.y1 and data.y2 paths are required");
    }
    cfg.y1_path = d["y1"].get<std::string>();
    cfg.y2_path = d["y2"].get<std::string>();
  } else {
    cfg.simulate = true;
    const Json& s = d["simulate"];
    cfg.sim_n = s.value("n", cfg.sim_n);
    cfg.sim_t = s.value("t", cfg.sim_t);
    cfg.sim_replications = s.value("replications", cfg.sim_replications);
    if (!s.contains("truth")) throw ConfigError("config: simulate block needs 'truth'");
    cfg.truth = parameter_set_from_json(s["truth"], cfg.spec);
  }
  if (j.contains("truth")) cfg.truth = parameter_set_from_json(j["truth"], cfg.spec);
  if (j.contains("optimizer")) cfg.optimizer = rprop_config_from_json(j["optimizer"]);
  if (j.contains("evaluation")) {
    cfg.cutoff = j["evaluation"].value("cutoff", 0.5);
    cfg.split_t = j["evaluation"].value("split", -1);
  }
  if (j.contains("forecast")) {
    const std::string mode = j["forecast"].value("mode", "one_step");
    if (mode == "extrapolate") {
      cfg.extrapolate_forecast = true;
    } else if (mode != "one_step") {
      throw ConfigError("config: forecast.mode must be one_step or extrapolate");
    }
  }
  cfg.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("output")) cfg.out_dir = j["output"].value("dir", cfg.out_dir);
  if (j.contains("standard_errors")) {
    cfg.compute_hessian_se = j["standard_errors"].value("hessian", false);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace rsss
