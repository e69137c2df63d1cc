#pragma once

#include "rsss/data.hpp"
#include "rsss/model.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace rsss {

struct SimConfig {
  int n = 75;
  int t = 50;
  ParameterSet params;  // ground truth
  ModelSpec spec;
  std::uint64_t seed = 0;
  int replications = 1;
};

struct SimOutput {
  PanelDataset data;
  Eigen::MatrixXi true_regimes;        // n x t, values 1/2
  std::vector<Matrix> true_eta1;       // n of u1 x t
  Matrix true_eta2;                    // n x u2
  Matrix true_zeta2;                   // n x u1
};

/// Draws one complete panel from the full data-generating process: between
/// factors and random intercepts first, then for each occasion the regime
/// from the Markov-switching model (driven by the true latent states), the
/// within-level VAR(1) step, and the measurements.
inline SimOutput simulate_panel(const SimConfig& config) {
  const ModelSpec& spec = config.spec;
  const ParameterSet& p = config.params;
  spec.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimOutput out;
  out.data.n = config.n;
  out.data.t = config.t;
  out.data.y2 = Matrix::Zero(config.n, spec.o2);
  out.data.regime_event.assign(config.n, 0);
  out.true_regimes = Eigen::MatrixXi::Zero(config.n, config.t);
  out.true_eta2 = Matrix::Zero(config.n, spec.u2);
  out.true_zeta2 = Matrix::Zero(config.n, spec.u1);

  for (int i = 0; i < config.n; ++i) {
    Vector eta2(spec.u2), zeta2(spec.u1);
    for (int j = 0; j < spec.u2; ++j) eta2(j) = std::sqrt(p.p2(j)) * gauss(rng);
    for (int j = 0; j < spec.u1; ++j) zeta2(j) = std::sqrt(p.q2(j)) * gauss(rng);
    out.true_eta2.row(i) = eta2.transpose();
    out.true_zeta2.row(i) = zeta2.transpose();

    for (int j = 0; j < spec.o2; ++j) {
      out.data.y2(i, j) = p.lambda2.row(j).dot(eta2) + std::sqrt(p.r2(j)) * gauss(rng);
    }

    Matrix y1 = Matrix::Zero(spec.o1, config.t);
    Matrix eta1 = Matrix::Zero(spec.u1, config.t);
    // The state at t=0 is drawn from the same prior the filter assumes:
    // eta1_0 ~ N(0, I), zeta2 ~ N(0, Q2). Anything else would make the
    // generated panels systematically colder than the model in the early
    // occasions and bias the autoregression downward.
    Vector eta1_prev(spec.u1);
    for (int j = 0; j < spec.u1; ++j) eta1_prev(j) = gauss(rng);
    int s_prev = 0;  // S_i0 = 1
    for (int t = 0; t < config.t; ++t) {
      const auto [p1, p2v] = transition_probability(eta1_prev, eta2, p, spec, s_prev);
      const int s = unif(rng) < p1 ? 0 : 1;
      out.true_regimes(i, t) = s + 1;

      const Vector b1_i = p.b1[s] + p.b2[s] * eta2 + zeta2;
      const Matrix b3_i = p.b3[s] + p.b4[s] * eta2(0);
      Vector eta_t = b1_i + b3_i * eta1_prev;
      for (int j = 0; j < spec.u1; ++j) eta_t(j) += std::sqrt(p.q1[s](j)) * gauss(rng);
      eta1.col(t) = eta_t;

      for (int j = 0; j < spec.o1; ++j) {
        y1(j, t) = p.lambda1[s].row(j).dot(eta_t) + std::sqrt(p.r1[s](j)) * gauss(rng);
      }
      eta1_prev = eta_t;
      s_prev = s;
    }
    out.data.y1.push_back(std::move(y1));
    out.data.observed.push_back(
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(spec.o1, config.t,
                                                                      true));
    out.true_eta1.push_back(std::move(eta1));
  }
  return out;
}

/// R independent panels with per-replication derived seeds (seed + index).
inline std::vector<SimOutput> simulate_study(const SimConfig& config) {
  std::vector<SimOutput> out;
  out.reserve(config.replications);
  for (int r = 0; r < config.replications; ++r) {
    SimConfig rep = config;
    rep.seed = config.seed + static_cast<std::uint64_t>(r);
    rep.replications = 1;
    out.push_back(simulate_panel(rep));
  }
  return out;
}

}  // namespace rsss
