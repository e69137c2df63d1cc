#pragma once

#include "rsss/data.hpp"
#include "rsss/model.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace rsss {

struct FilterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Augmented state-space matrices for one individual. The augmented state
/// stacks the u1 dynamic factors on top of the u1 time-invariant random
/// intercepts, so every block is sized 2*u1.
struct AugmentedSystem {
  int u1 = 0;
  int o1 = 0;
  std::array<Matrix, 2> lambda_aug;  // o1 x 2u1, [Lambda1_s | 0]
  std::array<Vector, 2> r1;          // o1 diagonal
  std::array<Vector, 2> intercept;   // 2u1, (b1_s + b2_s eta2_i ; 0)
  std::array<Matrix, 2> dynamics;    // 2u1 x 2u1, [[B3_is, I], [0, I]]
  std::array<Matrix, 2> q_aug;       // 2u1 x 2u1, blockdiag(Q1_s, 0)
};

inline AugmentedSystem make_augmented(const ParameterSet& params, const ModelSpec& spec,
                                      const Vector& eta2_i) {
  AugmentedSystem sys;
  sys.u1 = spec.u1;
  sys.o1 = spec.o1;
  const int d = 2 * spec.u1;
  for (int s = 0; s < 2; ++s) {
    sys.lambda_aug[s] = Matrix::Zero(spec.o1, d);
    sys.lambda_aug[s].leftCols(spec.u1) = params.lambda1[s];
    sys.r1[s] = params.r1[s];
    sys.intercept[s] = Vector::Zero(d);
    sys.intercept[s].head(spec.u1) = params.b1[s] + params.b2[s] * eta2_i;
    // Interaction with the between level scales with the first factor score.
    const Matrix b3_i = params.b3[s] + params.b4[s] * eta2_i(0);
    sys.dynamics[s] = Matrix::Zero(d, d);
    sys.dynamics[s].topLeftCorner(spec.u1, spec.u1) = b3_i;
    sys.dynamics[s].topRightCorner(spec.u1, spec.u1) =
        Matrix::Identity(spec.u1, spec.u1);
    sys.dynamics[s].bottomRightCorner(spec.u1, spec.u1) =
        Matrix::Identity(spec.u1, spec.u1);
    sys.q_aug[s] = Matrix::Zero(d, d);
    sys.q_aug[s].topLeftCorner(spec.u1, spec.u1) = params.q1[s].asDiagonal();
  }
  return sys;
}

/// Collapsed filter state at one occasion: per-individual per-regime moments
/// and marginal regime probabilities.
struct FilterState {
  std::vector<std::array<Vector, 2>> eta;       // collapsed means, 2u1
  std::vector<std::array<Matrix, 2>> cov;       // collapsed covariances
  std::vector<std::array<double, 2>> pr_regime; // Pr[S_it = s | D_1:t]
};

/// eta_aug,0|0 = 0, P_aug,0|0 = blockdiag(I_u1, Q2), shared by all individuals.
inline FilterState init_state(const ModelSpec& spec, const ParameterSet& params, int n) {
  const int d = 2 * spec.u1;
  Matrix p0 = Matrix::Zero(d, d);
  p0.topLeftCorner(spec.u1, spec.u1) = Matrix::Identity(spec.u1, spec.u1);
  p0.bottomRightCorner(spec.u1, spec.u1) = params.q2.asDiagonal();
  FilterState state;
  state.eta.assign(n, {Vector::Zero(d), Vector::Zero(d)});
  state.cov.assign(n, {p0, p0});
  state.pr_regime.assign(
      n, {spec.initial_regime1_prob, 1.0 - spec.initial_regime1_prob});
  return state;
}

inline std::pair<Vector, Matrix> kalman_predict(const Vector& eta_prev,
                                                const Matrix& cov_prev,
                                                const AugmentedSystem& sys, int s) {
  Vector eta_pred = sys.intercept[s] + sys.dynamics[s] * eta_prev;
  Matrix cov_pred =
      sys.dynamics[s] * cov_prev * sys.dynamics[s].transpose() + sys.q_aug[s];
  cov_pred = 0.5 * (cov_pred + cov_pred.transpose()).eval();
  return {std::move(eta_pred), std::move(cov_pred)};
}

/// (I - K Lambda) P (I - K Lambda)' + K R K'; preserves PSD where the plain
/// subtraction form can go slightly indefinite.
inline Matrix joseph_covariance(const Matrix& cov_pred, const Matrix& gain,
                                const Matrix& lambda, const Vector& r1) {
  const Matrix a = Matrix::Identity(cov_pred.rows(), cov_pred.cols()) - gain * lambda;
  Matrix out = a * cov_pred * a.transpose() +
               gain * r1.asDiagonal() * gain.transpose();
  return 0.5 * (out + out.transpose()).eval();
}

struct BranchUpdate {
  Vector eta;
  Matrix cov;
  Vector innovation;       // observed entries only
  Matrix innovation_cov;   // observed sub-block
  std::optional<double> loglik;  // absent when the occasion is all-missing
  bool ok = true;
  std::string error;
};

inline constexpr double kLog2Pi = 1.8378770664093453;

/// Measurement update restricted to the observed entries of y1. With every
/// entry missing the prediction is carried forward and no likelihood term is
/// produced. A non-PD innovation covariance is reported as a failure.
inline BranchUpdate kalman_update(const Vector& eta_pred, const Matrix& cov_pred,
                                  const Vector& y1, const std::vector<int>& obs_idx,
                                  const AugmentedSystem& sys, int s) {
  BranchUpdate out;
  if (obs_idx.empty()) {
    out.eta = eta_pred;
    out.cov = cov_pred;
    return out;
  }
  const int o = static_cast<int>(obs_idx.size());
  const int d = static_cast<int>(eta_pred.size());
  Matrix lambda(o, d);
  Vector r(o), y(o);
  for (int k = 0; k < o; ++k) {
    lambda.row(k) = sys.lambda_aug[s].row(obs_idx[k]);
    r(k) = sys.r1[s](obs_idx[k]);
    y(k) = y1(obs_idx[k]);
  }
  out.innovation = y - lambda * eta_pred;
  const Matrix lp = lambda * cov_pred;  // o x d
  Matrix f = lp * lambda.transpose();
  f += r.asDiagonal();
  f = 0.5 * (f + f.transpose()).eval();
  Eigen::LLT<Matrix> llt(f);
  if (llt.info() != Eigen::Success) {
    out.ok = false;
    out.error = "non-positive-definite innovation covariance";
    return out;
  }
  out.innovation_cov = f;
  const Matrix gain = llt.solve(lp).transpose();  // d x o
  out.eta = eta_pred + gain * out.innovation;
  out.cov = joseph_covariance(cov_pred, gain, lambda, r);
  double logdet = 0.0;
  for (int k = 0; k < o; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));
  const double quad = out.innovation.dot(llt.solve(out.innovation));
  out.loglik = -0.5 * (o * kLog2Pi + logdet + quad);
  return out;
}

using Joint = std::array<std::array<double, 2>, 2>;  // [s][s_prev]

/// Joint prior over (current, previous) regime from the transition matrix
/// trans[s][s_prev] and the previous marginal probabilities.
inline Joint hamilton_predict(const std::array<double, 2>& pr_prev,
                              const std::array<std::array<double, 2>, 2>& trans) {
  Joint joint{};
  for (int s = 0; s < 2; ++s) {
    for (int sp = 0; sp < 2; ++sp) {
      joint[s][sp] = trans[s][sp] * pr_prev[sp];
    }
  }
  return joint;
}

struct HamiltonUpdate {
  Joint joint_post{};
  std::array<double, 2> marginal{};
  double log_density = 0.0;  // log prediction-error decomposition term
  bool ok = true;
};

/// Reweights the joint prior by the branch likelihoods, in log space
/// (log-sum-exp over branches with positive prior mass).
inline HamiltonUpdate hamilton_update(const Joint& joint_prior,
                                      const Joint& log_branch_lik) {
  HamiltonUpdate out;
  double max_term = -std::numeric_limits<double>::infinity();
  Joint log_term{};
  for (int s = 0; s < 2; ++s) {
    for (int sp = 0; sp < 2; ++sp) {
      if (joint_prior[s][sp] > 0.0) {
        log_term[s][sp] = log_branch_lik[s][sp] + std::log(joint_prior[s][sp]);
        max_term = std::max(max_term, log_term[s][sp]);
      } else {
        log_term[s][sp] = -std::numeric_limits<double>::infinity();
      }
    }
  }
  if (!std::isfinite(max_term)) {
    out.ok = false;
    return out;
  }
  double sum = 0.0;
  for (int s = 0; s < 2; ++s) {
    for (int sp = 0; sp < 2; ++sp) {
      sum += std::exp(log_term[s][sp] - max_term);
    }
  }
  out.log_density = max_term + std::log(sum);
  for (int s = 0; s < 2; ++s) {
    for (int sp = 0; sp < 2; ++sp) {
      out.joint_post[s][sp] =
          joint_prior[s][sp] > 0.0 ? std::exp(log_term[s][sp] - out.log_density) : 0.0;
    }
    out.marginal[s] = out.joint_post[s][0] + out.joint_post[s][1];
  }
  return out;
}

/// Mixture moments per current regime, weighted by W = joint / marginal.
/// A zero marginal carries forward the branch with the larger joint mass.
inline void collapse(const Joint& joint_post,
                     const std::array<std::array<Vector, 2>, 2>& eta_upd,
                     const std::array<std::array<Matrix, 2>, 2>& cov_upd,
                     std::array<Vector, 2>& eta_out, std::array<Matrix, 2>& cov_out) {
  for (int s = 0; s < 2; ++s) {
    const double marginal = joint_post[s][0] + joint_post[s][1];
    if (marginal <= 0.0) {
      const int sp = joint_post[s][1] > joint_post[s][0] ? 1 : 0;
      eta_out[s] = eta_upd[s][sp];
      cov_out[s] = cov_upd[s][sp];
      continue;
    }
    const std::array<double, 2> w{joint_post[s][0] / marginal,
                                  joint_post[s][1] / marginal};
    // Zero-weight branches may carry no moments; never touch them.
    const int lead = w[0] > 0.0 ? 0 : 1;
    eta_out[s] = w[lead] * eta_upd[s][lead];
    if (w[1 - lead] > 0.0) eta_out[s] += w[1 - lead] * eta_upd[s][1 - lead];
    Matrix cov = Matrix::Zero(eta_out[s].size(), eta_out[s].size());
    for (int sp = 0; sp < 2; ++sp) {
      if (w[sp] <= 0.0) continue;
      const Vector d = eta_out[s] - eta_upd[s][sp];
      cov += w[sp] * (cov_upd[s][sp] + d * d.transpose());
    }
    cov_out[s] = 0.5 * (cov + cov.transpose()).eval();
  }
}

struct FilterOptions {
  int t_begin = 1;  // 1-based, inclusive
  int t_end = -1;   // -1 = data.t
  bool record = false;
  // Occasions strictly after this index are treated as unobserved
  // (pure extrapolation); -1 disables.
  int extrapolate_after = -1;
};

/// Per-(i,t) filtered and one-step-ahead outputs; only filled when
/// FilterOptions::record is set.
struct FilterRecord {
  Matrix pr2_filtered;   // n x T
  Matrix pr2_predicted;  // n x T, one-step-ahead Pr[S_it=2 | D_1:t-1]
  std::vector<Matrix> eta_filtered;   // n of u1 x T, marginal collapsed means
  std::vector<Matrix> eta_predicted;  // n of u1 x T, marginal one-step means
  std::vector<Matrix> eta_predicted_var;  // n of u1 x T, marginal diag variances
  std::vector<Matrix> y_predicted;    // n of o1 x T
};

struct FilterRun {
  double loglik = 0.0;
  Matrix loglik_it;  // n x T, NaN where no likelihood term exists
  FilterState state;
  FilterRecord record;
  bool failed = false;
  std::string error;
};

namespace detail {

struct StepScratch {
  std::array<std::array<Vector, 2>, 2> eta_pred, eta_upd;
  std::array<std::array<Matrix, 2>, 2> cov_pred, cov_upd;
  std::array<std::array<bool, 2>, 2> computed{};
};

}  // namespace detail

/// One occasion of the extended Kim filter for every individual: Kalman
/// branches over (s, s_prev), Hamilton predict/update, observed-regime
/// clamping, and collapsing. Mutates `state` from t-1 to t and returns the
/// occasion's total log prediction-error decomposition.
inline double filter_step(FilterState& state, const PanelDataset& data, int t,
                          const std::vector<AugmentedSystem>& systems,
                          const ParameterSet& params, const ModelSpec& spec,
                          const Matrix& scores, bool force_missing = false,
                          FilterRun* run = nullptr) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  double loglik_t = 0.0;
  std::vector<int> obs_idx;
  for (int i = 0; i < data.n; ++i) {
    const AugmentedSystem& sys = systems[i];
    const Vector eta2_i = scores.row(i).transpose();

    obs_idx.clear();
    if (!force_missing) {
      for (int j = 0; j < spec.o1; ++j) {
        if (data.observed[i](j, t - 1)) obs_idx.push_back(j);
      }
    }

    // Transition matrix from the previous collapsed within-level means.
    std::array<std::array<double, 2>, 2> trans{};
    for (int sp = 0; sp < 2; ++sp) {
      const Vector eta1_prev = state.eta[i][sp].head(spec.u1);
      auto [p1, p2] = transition_probability(eta1_prev, eta2_i, params, spec, sp);
      trans[0][sp] = p1;
      trans[1][sp] = p2;
    }
    const Joint joint_prior = hamilton_predict(state.pr_regime[i], trans);

    detail::StepScratch br;
    Joint log_lik{};
    auto run_branch = [&](int s, int sp) {
      if (br.computed[s][sp]) return true;
      auto [eta_pred, cov_pred] =
          kalman_predict(state.eta[i][sp], state.cov[i][sp], sys, s);
      BranchUpdate upd = kalman_update(eta_pred, cov_pred, data.y1[i].col(t - 1),
                                       obs_idx, sys, s);
      if (!upd.ok) {
        throw FilterError("filter failure at individual " + std::to_string(i + 1) +
                          ", t=" + std::to_string(t) + ", branch (s=" +
                          std::to_string(s + 1) + ", s'=" + std::to_string(sp + 1) +
                          "): " + upd.error);
      }
      br.eta_pred[s][sp] = std::move(eta_pred);
      br.cov_pred[s][sp] = std::move(cov_pred);
      br.eta_upd[s][sp] = std::move(upd.eta);
      br.cov_upd[s][sp] = std::move(upd.cov);
      log_lik[s][sp] = upd.loglik.value_or(0.0);
      br.computed[s][sp] = true;
      return true;
    };
    for (int s = 0; s < 2; ++s) {
      for (int sp = 0; sp < 2; ++sp) {
        if (joint_prior[s][sp] > 0.0) run_branch(s, sp);
      }
    }

    Joint joint_post{};
    bool contributed = false;
    double log_density = 0.0;
    if (obs_idx.empty()) {
      // Missing-occasion substitution: posterior = prior, update = prediction.
      joint_post = joint_prior;
      for (int s = 0; s < 2; ++s) {
        for (int sp = 0; sp < 2; ++sp) {
          if (br.computed[s][sp]) {
            br.eta_upd[s][sp] = br.eta_pred[s][sp];
            br.cov_upd[s][sp] = br.cov_pred[s][sp];
          }
        }
      }
    } else {
      HamiltonUpdate hu = hamilton_update(joint_prior, log_lik);
      if (!hu.ok) {
        throw FilterError("degenerate likelihood at individual " +
                          std::to_string(i + 1) + ", t=" + std::to_string(t));
      }
      joint_post = hu.joint_post;
      log_density = hu.log_density;
      contributed = true;
    }

    // Observed regime: all mass on s=2 from the event time onward.
    if (data.regime_event[i] > 0 && t >= data.regime_event[i]) {
      joint_post[0][0] = joint_post[0][1] = 0.0;
      const double mass = joint_post[1][0] + joint_post[1][1];
      if (mass > 0.0) {
        joint_post[1][0] /= mass;
        joint_post[1][1] = 1.0 - joint_post[1][0];  // exact unit mass on s=2
      } else {
        const int sp = joint_prior[1][1] > joint_prior[1][0] ? 1 : 0;
        joint_post[1][sp] = 1.0;
      }
    }

    // Make sure every branch used by the collapse has moments.
    for (int s = 0; s < 2; ++s) {
      const double marginal = joint_post[s][0] + joint_post[s][1];
      if (marginal <= 0.0) {
        const int sp = state.pr_regime[i][1] > state.pr_regime[i][0] ? 1 : 0;
        if (!br.computed[s][sp]) run_branch(s, sp);
        if (!br.computed[s][1 - sp]) {
          br.eta_upd[s][1 - sp] = br.eta_upd[s][sp];
          br.cov_upd[s][1 - sp] = br.cov_upd[s][sp];
        }
      } else {
        for (int sp = 0; sp < 2; ++sp) {
          if (joint_post[s][sp] > 0.0 && !br.computed[s][sp]) run_branch(s, sp);
        }
      }
    }

    if (run && run->record.pr2_predicted.size() > 0) {
      FilterRecord& rec = run->record;
      rec.pr2_predicted(i, t - 1) = joint_prior[1][0] + joint_prior[1][1];
      Vector eta_pred_m = Vector::Zero(2 * spec.u1);
      Vector var_pred_m = Vector::Zero(2 * spec.u1);
      Vector y_pred_m = Vector::Zero(spec.o1);
      for (int s = 0; s < 2; ++s) {
        for (int sp = 0; sp < 2; ++sp) {
          if (joint_prior[s][sp] <= 0.0) continue;
          eta_pred_m += joint_prior[s][sp] * br.eta_pred[s][sp];
          y_pred_m += joint_prior[s][sp] * (sys.lambda_aug[s] * br.eta_pred[s][sp]);
        }
      }
      for (int s = 0; s < 2; ++s) {
        for (int sp = 0; sp < 2; ++sp) {
          if (joint_prior[s][sp] <= 0.0) continue;
          const Vector d = br.eta_pred[s][sp] - eta_pred_m;
          var_pred_m += joint_prior[s][sp] *
                        (br.cov_pred[s][sp].diagonal() + d.cwiseProduct(d));
        }
      }
      rec.eta_predicted[i].col(t - 1) = eta_pred_m.head(spec.u1);
      rec.eta_predicted_var[i].col(t - 1) = var_pred_m.head(spec.u1);
      rec.y_predicted[i].col(t - 1) = y_pred_m;
    }

    collapse(joint_post, br.eta_upd, br.cov_upd, state.eta[i], state.cov[i]);
    state.pr_regime[i] = {joint_post[0][0] + joint_post[0][1],
                          joint_post[1][0] + joint_post[1][1]};

    if (run) {
      run->loglik_it(i, t - 1) = contributed ? log_density : nan;
      if (run->record.pr2_filtered.size() > 0) {
        run->record.pr2_filtered(i, t - 1) = state.pr_regime[i][1];
        Vector eta_m = state.pr_regime[i][0] * state.eta[i][0] +
                       state.pr_regime[i][1] * state.eta[i][1];
        run->record.eta_filtered[i].col(t - 1) = eta_m.head(spec.u1);
      }
    }
    if (contributed) loglik_t += log_density;
  }
  return loglik_t;
}

/// Full recursion t = t_begin..t_end; total loglik is the sum of the log
/// prediction-error decomposition over individuals and occasions.
inline FilterRun run_filter(const PanelDataset& data, const ParameterSet& params,
                            const ModelSpec& spec, const Matrix& scores,
                            const FilterOptions& options = {}) {
  const int t_end = options.t_end < 0 ? data.t : options.t_end;
  FilterRun run;
  run.loglik_it =
      Matrix::Constant(data.n, data.t, std::numeric_limits<double>::quiet_NaN());
  if (options.record) {
    run.record.pr2_filtered = Matrix::Zero(data.n, data.t);
    run.record.pr2_predicted = Matrix::Zero(data.n, data.t);
    for (int i = 0; i < data.n; ++i) {
      run.record.eta_filtered.emplace_back(Matrix::Zero(spec.u1, data.t));
      run.record.eta_predicted.emplace_back(Matrix::Zero(spec.u1, data.t));
      run.record.eta_predicted_var.emplace_back(Matrix::Zero(spec.u1, data.t));
      run.record.y_predicted.emplace_back(Matrix::Zero(spec.o1, data.t));
    }
  }
  run.state = init_state(spec, params, data.n);
  std::vector<AugmentedSystem> systems;
  systems.reserve(data.n);
  for (int i = 0; i < data.n; ++i) {
    systems.push_back(make_augmented(params, spec, scores.row(i).transpose()));
  }
  try {
    for (int t = options.t_begin; t <= t_end; ++t) {
      const bool force_missing =
          options.extrapolate_after >= 0 && t > options.extrapolate_after;
      run.loglik += filter_step(run.state, data, t, systems, params, spec, scores,
                                force_missing, &run);
    }
  } catch (const FilterError& e) {
    run.failed = true;
    run.error = e.what();
    run.loglik = -std::numeric_limits<double>::infinity();
  }
  return run;
}

}  // namespace rsss
