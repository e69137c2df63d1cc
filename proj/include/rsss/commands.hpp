#pragma once

#include "rsss/config.hpp"
#include "rsss/data.hpp"
#include "rsss/estimate.hpp"
#include "rsss/evaluate.hpp"
#include "rsss/simulate.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

namespace rsss {

namespace fs = std::filesystem;

namespace detail {

inline std::string rep_dir_name(int r) {
  std::ostringstream os;
  os << "rep_" << std::setw(3) << std::setfill('0') << (r + 1);
  return os.str();
}

inline std::vector<fs::path> replication_dirs(const fs::path& out_dir) {
  std::vector<fs::path> dirs;
  if (!fs::exists(out_dir)) return dirs;
  for (const auto& e : fs::directory_iterator(out_dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("rep_", 0) == 0) {
      dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

inline void write_truth_files(const fs::path& dir, const SimOutput& sim) {
  {
    std::ofstream out(dir / "truth_regimes.csv");
    out << "id,t,regime";
    const int u1 = static_cast<int>(sim.true_eta1.empty() ? 0 : sim.true_eta1[0].rows());
    for (int j = 0; j < u1; ++j) out << ",eta_" << (j + 1);
    out << "\n";
    for (int i = 0; i < sim.data.n; ++i) {
      for (int t = 0; t < sim.data.t; ++t) {
        out << (i + 1) << "," << (t + 1) << "," << sim.true_regimes(i, t);
        for (int j = 0; j < u1; ++j) out << "," << csv::format(sim.true_eta1[i](j, t));
        out << "\n";
      }
    }
  }
  {
    std::ofstream out(dir / "truth_between.csv");
    out << "id";
    for (int j = 0; j < sim.true_eta2.cols(); ++j) out << ",eta2_" << (j + 1);
    for (int j = 0; j < sim.true_zeta2.cols(); ++j) out << ",zeta2_" << (j + 1);
    out << "\n";
    for (int i = 0; i < sim.data.n; ++i) {
      out << (i + 1);
      for (int j = 0; j < sim.true_eta2.cols(); ++j) {
        out << "," << csv::format(sim.true_eta2(i, j));
      }
      for (int j = 0; j < sim.true_zeta2.cols(); ++j) {
        out << "," << csv::format(sim.true_zeta2(i, j));
      }
      out << "\n";
    }
  }
}

struct TruthFiles {
  Eigen::MatrixXi regimes;       // n x t
  std::vector<Matrix> eta1;      // n of u1 x t
};

inline TruthFiles read_truth_regimes(const fs::path& path, int n, int t, int u1) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing truth sidecar " + path.string());
  std::string line;
  std::getline(in, line);
  TruthFiles out;
  out.regimes = Eigen::MatrixXi::Zero(n, t);
  out.eta1.assign(n, Matrix::Zero(u1, t));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = csv::split_line(line);
    const int i = std::stoi(cells[0]) - 1;
    const int tt = std::stoi(cells[1]) - 1;
    out.regimes(i, tt) = std::stoi(cells[2]);
    for (int j = 0; j < u1; ++j) out.eta1[i](j, tt) = std::stod(cells[3 + j]);
  }
  return out;
}

inline void write_filtered_csv(const fs::path& path, const FilterRun& run, int t_end) {
  std::ofstream out(path);
  const int n = static_cast<int>(run.record.pr2_filtered.rows());
  const int u1 = static_cast<int>(run.record.eta_filtered.empty()
                                      ? 0
                                      : run.record.eta_filtered[0].rows());
  const int o1 = static_cast<int>(run.record.y_predicted.empty()
                                      ? 0
                                      : run.record.y_predicted[0].rows());
  out << "id,t,prS2_filtered";
  for (int j = 0; j < u1; ++j) out << ",eta_" << (j + 1);
  for (int j = 0; j < o1; ++j) out << ",y_pred_" << (j + 1);
  out << "\n";
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_end; ++t) {
      out << (i + 1) << "," << (t + 1) << ","
          << csv::format(run.record.pr2_filtered(i, t));
      for (int j = 0; j < u1; ++j) {
        out << "," << csv::format(run.record.eta_filtered[i](j, t));
      }
      for (int j = 0; j < o1; ++j) {
        out << "," << csv::format(run.record.y_predicted[i](j, t));
      }
      out << "\n";
    }
  }
}

inline void write_forecast_csv(const fs::path& path, const FilterRun& run) {
  std::ofstream out(path);
  const int n = static_cast<int>(run.record.pr2_filtered.rows());
  const int t_all = static_cast<int>(run.record.pr2_filtered.cols());
  const int u1 = static_cast<int>(run.record.eta_predicted.empty()
                                      ? 0
                                      : run.record.eta_predicted[0].rows());
  const int o1 = static_cast<int>(run.record.y_predicted.empty()
                                      ? 0
                                      : run.record.y_predicted[0].rows());
  out << "id,t,prS2_pred,prS2_filtered";
  for (int j = 0; j < u1; ++j) out << ",eta_pred_" << (j + 1);
  for (int j = 0; j < u1; ++j) out << ",eta_sd_" << (j + 1);
  for (int j = 0; j < o1; ++j) out << ",y_pred_" << (j + 1);
  out << "\n";
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_all; ++t) {
      out << (i + 1) << "," << (t + 1) << ","
          << csv::format(run.record.pr2_predicted(i, t)) << ","
          << csv::format(run.record.pr2_filtered(i, t));
      for (int j = 0; j < u1; ++j) {
        out << "," << csv::format(run.record.eta_predicted[i](j, t));
      }
      for (int j = 0; j < u1; ++j) {
        out << "," << csv::format(std::sqrt(std::max(0.0, run.record.eta_predicted_var[i](j, t))));
      }
      for (int j = 0; j < o1; ++j) {
        out << "," << csv::format(run.record.y_predicted[i](j, t));
      }
      out << "\n";
    }
  }
}

inline Json fit_to_json(const FitResult& fit, const ModelSpec& spec,
                        std::uint64_t seed, double seconds) {
  Json params = Json::array();
  for (const SeEntry& e : fit.se_opg) {
    Json p{{"name", e.name}, {"estimate", e.estimate}, {"fixed", false}};
    if (e.se) {
      p["se"] = *e.se;
    } else {
      p["se"] = nullptr;
    }
    params.push_back(std::move(p));
  }
  // Fixed parameters carry a marker and no SE.
  if (!spec.gamma1_free) {
    params.push_back({{"name", "gamma1"},
                      {"estimate", spec.gamma1_fixed},
                      {"se", nullptr},
                      {"fixed", true}});
  }
  if (!spec.p12_free) {
    params.push_back({{"name", "p12"},
                      {"estimate", spec.p12_fixed},
                      {"se", nullptr},
                      {"fixed", true}});
  }
  if (!spec.p2_free) {
    for (int r = 0; r < spec.u2; ++r) {
      params.push_back({{"name", "p2[" + std::to_string(r + 1) + "]"},
                        {"estimate", spec.p2_fixed(r)},
                        {"se", nullptr},
                        {"fixed", true}});
    }
  }
  Json j;
  j["parameters"] = std::move(params);
  if (!fit.se_hessian.empty()) {
    Json hs = Json::array();
    for (const SeEntry& e : fit.se_hessian) {
      hs.push_back({{"name", e.name}, {"se", e.se ? Json(*e.se) : Json(nullptr)}});
    }
    j["hessian_se"] = std::move(hs);
  }
  j["loglik"] = fit.loglik;
  j["loglik_trace"] = fit.loglik_trace;
  j["theta"] = cfg::vector_to_json(fit.theta_hat);
  j["estimates"] = to_json(fit.params_hat);
  j["start_index"] = fit.start_index;
  j["train_t"] = fit.train_t;
  j["converged"] = fit.converged;
  j["seed"] = seed;
  j["seconds"] = seconds;
  return j;
}

inline FilterRun forecast_run(const PanelDataset& data, const ParameterSet& params,
                              const ModelSpec& spec, const RunConfig& cfg, int split_t) {
  const FactorScoreWeights w = bartlett_weights(params.lambda2, params.r2);
  const Matrix scores = score(data.y2, w);
  FilterOptions opt;
  opt.record = true;
  if (cfg.extrapolate_forecast) opt.extrapolate_after = split_t;
  return run_filter(data, params, spec, scores, opt);
}

}  // namespace detail

/// Writes panel CSVs plus ground-truth sidecars for every replication and a
/// manifest with the per-replication seeds.
inline void cmd_simulate(const RunConfig& cfg) {
  if (!cfg.simulate) throw ConfigError("simulate: config has no data.simulate block");
  fs::create_directories(cfg.out_dir);
  SimConfig sim;
  sim.n = cfg.sim_n;
  sim.t = cfg.sim_t;
  sim.spec = cfg.spec;
  sim.params = *cfg.truth;
  sim.seed = cfg.seed;
  sim.replications = cfg.sim_replications;

  Json manifest;
  manifest["config"] = cfg.raw;
  manifest["replications"] = Json::array();
  for (int r = 0; r < cfg.sim_replications; ++r) {
    SimConfig rep = sim;
    rep.seed = sim.seed + static_cast<std::uint64_t>(r);
    const SimOutput out = simulate_panel(rep);
    const fs::path dir = fs::path(cfg.out_dir) / detail::rep_dir_name(r);
    fs::create_directories(dir);
    write_y1_csv(dir / "y1.csv", out.data);
    write_y2_csv(dir / "y2.csv", out.data);
    detail::write_truth_files(dir, out);
    manifest["replications"].push_back(
        {{"dir", detail::rep_dir_name(r)}, {"seed", rep.seed}});
  }
  std::ofstream mout(fs::path(cfg.out_dir) / "manifest.json");
  mout << manifest.dump(2) << "\n";
}

/// Fits one dataset; writes fit.json and the per-(i,t) filtered outputs.
inline FitResult fit_one(const PanelDataset& data, const RunConfig& cfg,
                         const fs::path& dir, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const int train_t = cfg.split_t > 0 ? cfg.split_t : data.t / 2;
  FitResult fit = rprop_fit(data, cfg.spec, cfg.optimizer, seed, train_t);
  fit.se_opg = opg_standard_errors(fit.theta_hat, data, cfg.spec, train_t);
  if (cfg.compute_hessian_se) {
    fit.se_hessian = hessian_standard_errors(fit.theta_hat, data, cfg.spec, train_t);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::ofstream out(dir / "fit.json");
  out << detail::fit_to_json(fit, cfg.spec, seed, seconds).dump(2) << "\n";

  const FactorScoreWeights w =
      bartlett_weights(fit.params_hat.lambda2, fit.params_hat.r2);
  FilterOptions opt;
  opt.record = true;
  opt.t_end = train_t;
  const FilterRun run = run_filter(data, fit.params_hat, cfg.spec,
                                   score(data.y2, w), opt);
  detail::write_filtered_csv(dir / "filtered.csv", run, train_t);
  return fit;
}

inline void cmd_fit(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  if (cfg.simulate) {
    const auto dirs = detail::replication_dirs(cfg.out_dir);
    if (dirs.empty()) {
      throw ConfigError("fit: no replication directories under " + cfg.out_dir +
                        " (run simulate first)");
    }
    int r = 0;
    for (const fs::path& dir : dirs) {
      const PanelDataset data = read_panel_csv(dir / "y1.csv", dir / "y2.csv");
      data.validate(cfg.spec);
      fit_one(data, cfg, dir, cfg.seed + 1000 + static_cast<std::uint64_t>(r++));
    }
  } else {
    const PanelDataset data = read_panel_csv(*cfg.y1_path, *cfg.y2_path);
    data.validate(cfg.spec);
    fit_one(data, cfg, cfg.out_dir, cfg.seed);
  }
}

/// Runs the filter over the full horizon with the fitted parameters frozen;
/// emits regime probabilities, latent means with 1-SD bands, and observation
/// forecasts.
inline void cmd_forecast(const RunConfig& cfg) {
  auto forecast_dir = [&](const fs::path& dir, const PanelDataset& data) {
    std::ifstream in(dir / "fit.json");
    if (!in) throw ConfigError("forecast: missing fit.json in " + dir.string());
    const Json fit_json = Json::parse(in);
    const ParameterSet params =
        parameter_set_from_json(fit_json.at("estimates"), cfg.spec);
    const int split_t = fit_json.value("train_t", data.t / 2);
    if (cfg.extrapolate_forecast && split_t >= data.t) {
      throw ConfigError("forecast: no horizon beyond the training window");
    }
    const FilterRun run = detail::forecast_run(data, params, cfg.spec, cfg, split_t);
    if (run.failed) throw std::runtime_error("forecast: filter failed: " + run.error);
    detail::write_forecast_csv(dir / "forecast.csv", run);
  };
  if (cfg.simulate) {
    const auto dirs = detail::replication_dirs(cfg.out_dir);
    if (dirs.empty()) throw ConfigError("forecast: no replication directories");
    for (const fs::path& dir : dirs) {
      forecast_dir(dir, read_panel_csv(dir / "y1.csv", dir / "y2.csv"));
    }
  } else {
    forecast_dir(cfg.out_dir, read_panel_csv(*cfg.y1_path, *cfg.y2_path));
  }
}

struct EvaluateOutput {
  std::vector<RegimeMetrics> per_replication;
  WindowMetrics pooled_observed;
  WindowMetrics pooled_forecast;
  std::vector<ScoreSeries> scores;
  std::optional<RecoveryStats> recovery;
};

/// Reads forecasts and truth sidecars for every replication; writes the
/// metric tables (per-replication and pooled confusion counts, the
/// per-occasion score series, and the parameter-recovery table).
inline EvaluateOutput cmd_evaluate(const RunConfig& cfg) {
  const auto dirs = detail::replication_dirs(cfg.out_dir);
  if (dirs.empty()) throw ConfigError("evaluate: no replication directories");
  if (!cfg.truth) throw ConfigError("evaluate: config has no ground-truth parameters");

  EvaluateOutput out;
  long pooled[2][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  std::vector<Vector> estimates;
  const int u1 = cfg.spec.u1;

  for (const fs::path& dir : dirs) {
    const PanelDataset data = read_panel_csv(dir / "y1.csv", dir / "y2.csv");
    const int split_t = cfg.split_t > 0 ? cfg.split_t : data.t / 2;
    if (split_t >= data.t) {
      throw ConfigError("evaluate: empty forecast window (split >= T)");
    }
    const auto truth =
        detail::read_truth_regimes(dir / "truth_regimes.csv", data.n, data.t, u1);

    std::ifstream fin(dir / "forecast.csv");
    if (!fin) throw ConfigError("evaluate: missing forecast.csv in " + dir.string());
    std::string line;
    std::getline(fin, line);
    Matrix pr2_pred = Matrix::Zero(data.n, data.t);
    Matrix pr2_filt = Matrix::Zero(data.n, data.t);
    std::vector<Matrix> eta_pred(data.n, Matrix::Zero(u1, data.t));
    while (std::getline(fin, line)) {
      if (line.empty()) continue;
      auto cells = csv::split_line(line);
      const int i = std::stoi(cells[0]) - 1;
      const int t = std::stoi(cells[1]) - 1;
      pr2_pred(i, t) = std::stod(cells[2]);
      pr2_filt(i, t) = std::stod(cells[3]);
      for (int j = 0; j < u1; ++j) eta_pred[i](j, t) = std::stod(cells[4 + j]);
    }

    // Observed window judged on filtered probabilities, forecast window on
    // one-step-ahead probabilities.
    Matrix pr2 = pr2_pred;
    for (int i = 0; i < data.n; ++i) {
      for (int t = 0; t < split_t; ++t) pr2(i, t) = pr2_filt(i, t);
    }
    const RegimeMetrics m = regime_metrics(pr2, truth.regimes, split_t, cfg.cutoff);
    out.per_replication.push_back(m);
    pooled[0][0] += m.observed.tp; pooled[0][1] += m.observed.fn;
    pooled[0][2] += m.observed.tn; pooled[0][3] += m.observed.fp;
    pooled[1][0] += m.forecast.tp; pooled[1][1] += m.forecast.fn;
    pooled[1][2] += m.forecast.tn; pooled[1][3] += m.forecast.fp;

    out.scores.push_back(score_function(eta_pred, truth.eta1, split_t + 1, data.t));

    std::ifstream fitin(dir / "fit.json");
    if (fitin) {
      const Json fit_json = Json::parse(fitin);
      const ParameterSet est =
          parameter_set_from_json(fit_json.at("estimates"), cfg.spec);
      estimates.push_back(constrained_values(est, cfg.spec));
    }
  }
  out.pooled_observed = detail::confusion_metrics(pooled[0][0], pooled[0][1],
                                                  pooled[0][2], pooled[0][3]);
  out.pooled_forecast = detail::confusion_metrics(pooled[1][0], pooled[1][1],
                                                  pooled[1][2], pooled[1][3]);
  if (estimates.size() >= 2) {
    out.recovery = recovery_stats(estimates, *cfg.truth, cfg.spec);
  }

  auto fmt_opt = [](const std::optional<double>& v) {
    return v ? csv::format(*v) : std::string();
  };
  {
    std::ofstream m(fs::path(cfg.out_dir) / "metrics.csv");
    m << "rep,accuracy_observed,accuracy_forecast,sensitivity_observed,"
         "sensitivity_forecast,specificity_observed,specificity_forecast\n";
    for (size_t r = 0; r < out.per_replication.size(); ++r) {
      const RegimeMetrics& rm = out.per_replication[r];
      m << (r + 1) << "," << fmt_opt(rm.observed.accuracy) << ","
        << fmt_opt(rm.forecast.accuracy) << "," << fmt_opt(rm.observed.sensitivity)
        << "," << fmt_opt(rm.forecast.sensitivity) << ","
        << fmt_opt(rm.observed.specificity) << "," << fmt_opt(rm.forecast.specificity)
        << "\n";
    }
  }
  {
    std::ofstream m(fs::path(cfg.out_dir) / "metrics_pooled.csv");
    m << "window,tp,fn,tn,fp,accuracy,sensitivity,specificity\n";
    auto emit = [&](const char* name, const WindowMetrics& w) {
      m << name << "," << w.tp << "," << w.fn << "," << w.tn << "," << w.fp << ","
        << fmt_opt(w.accuracy) << "," << fmt_opt(w.sensitivity) << ","
        << fmt_opt(w.specificity) << "\n";
    };
    emit("observed", out.pooled_observed);
    emit("forecast", out.pooled_forecast);
  }
  {
    std::ofstream m(fs::path(cfg.out_dir) / "score_series.csv");
    m << "rep,t,delta\n";
    for (size_t r = 0; r < out.scores.size(); ++r) {
      for (size_t k = 0; k < out.scores[r].t.size(); ++k) {
        m << (r + 1) << "," << out.scores[r].t[k] << ","
          << csv::format(out.scores[r].delta[k]) << "\n";
      }
    }
  }
  if (out.recovery) {
    std::ofstream m(fs::path(cfg.out_dir) / "recovery.csv");
    m << "parameter,truth,mean,bias,rmse,sd\n";
    for (const RecoveryRow& row : out.recovery->rows) {
      m << row.name << "," << csv::format(row.truth) << "," << csv::format(row.mean)
        << "," << csv::format(row.bias) << "," << csv::format(row.rmse) << ","
        << csv::format(row.sd) << "\n";
    }
  }
  return out;
}

}  // namespace rsss
