#pragma once

#include "rsss/data.hpp"
#include "rsss/factor_scores.hpp"
#include "rsss/filter.hpp"
#include "rsss/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rsss {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct RpropConfig {
  double delta0 = 0.1;
  double eta_plus = 1.2;
  double eta_minus = 0.5;
  double delta_min = 1e-6;
  double delta_max = 50.0;
  int patience = 20;
  double tol = 1e-4;
  int n_starts = 3;
  int max_iter = 2000;
  double grad_step = 1e-5;
  double start_spread = 0.1;  // sd of the perturbation around neutral values

  void validate() const {
    if (!(eta_minus > 0.0 && eta_minus < 1.0 && eta_plus > 1.0)) {
      throw ConstraintError("RpropConfig: need 0 < eta_minus < 1 < eta_plus");
    }
    if (!(delta_min > 0.0 && delta_min <= delta0 && delta0 <= delta_max)) {
      throw ConstraintError("RpropConfig: need 0 < delta_min <= delta0 <= delta_max");
    }
  }
};

struct SeEntry {
  std::string name;
  double estimate = 0.0;          // constrained scale
  std::optional<double> se;       // constrained scale; absent when unavailable
  bool fixed = false;
};

struct FitResult {
  Vector theta_hat;
  ParameterSet params_hat;
  double loglik = kNegInf;
  std::vector<double> loglik_trace;  // winning start
  std::vector<SeEntry> se_opg;
  std::vector<SeEntry> se_hessian;
  int start_index = -1;
  int train_t = 0;
  bool converged = false;
};

/// Total approximate log-likelihood over the training window. Filter failures
/// (divergent parameters) map to -inf rather than an exception so the
/// optimizer can back away from them.
inline double total_loglik(const Vector& theta, const PanelDataset& data,
                           const ModelSpec& spec, int train_t) {
  if (train_t <= 0) return 0.0;
  try {
    const ParameterSet params = unpack(theta, spec);
    const FactorScoreWeights w = bartlett_weights(params.lambda2, params.r2);
    const Matrix scores = score(data.y2, w);
    FilterOptions opt;
    opt.t_end = train_t;
    const FilterRun run = run_filter(data, params, spec, scores, opt);
    if (run.failed || !std::isfinite(run.loglik)) return kNegInf;
    return run.loglik;
  } catch (const ConstraintError&) {
    return kNegInf;
  } catch (const EstimationError&) {
    return kNegInf;
  }
}

/// Per-individual summed log prediction-error terms at theta (for OPG scores).
inline Vector per_individual_loglik(const Vector& theta, const PanelDataset& data,
                                    const ModelSpec& spec, int train_t) {
  Vector out = Vector::Constant(data.n, kNegInf);
  if (train_t <= 0) return Vector::Zero(data.n);
  try {
    const ParameterSet params = unpack(theta, spec);
    const FactorScoreWeights w = bartlett_weights(params.lambda2, params.r2);
    const Matrix scores = score(data.y2, w);
    FilterOptions opt;
    opt.t_end = train_t;
    const FilterRun run = run_filter(data, params, spec, scores, opt);
    if (run.failed) return out;
    for (int i = 0; i < data.n; ++i) {
      double acc = 0.0;
      for (int t = 0; t < train_t; ++t) {
        const double v = run.loglik_it(i, t);
        if (std::isfinite(v)) acc += v;
      }
      out(i) = acc;
    }
    return out;
  } catch (const ConstraintError&) {
    return out;
  } catch (const EstimationError&) {
    return out;
  }
}

/// Central finite differences with a relative step; falls back to one-sided
/// differencing where one probe is -inf, and to 0 where both are.
inline Vector numerical_gradient(const std::function<double(const Vector&)>& f,
                                 const Vector& theta, double h = 1e-5,
                                 std::vector<int>* degenerate = nullptr) {
  Vector grad = Vector::Zero(theta.size());
  const double f0 = f(theta);
  Vector probe = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(theta(j)));
    probe(j) = theta(j) + step;
    const double fp = f(probe);
    probe(j) = theta(j) - step;
    const double fm = f(probe);
    probe(j) = theta(j);
    if (std::isfinite(fp) && std::isfinite(fm)) {
      grad(j) = (fp - fm) / (2.0 * step);
    } else if (std::isfinite(fp) && std::isfinite(f0)) {
      grad(j) = (fp - f0) / step;
    } else if (std::isfinite(fm) && std::isfinite(f0)) {
      grad(j) = (f0 - fm) / step;
    } else {
      grad(j) = 0.0;
      if (degenerate) degenerate->push_back(static_cast<int>(j));
    }
  }
  return grad;
}

struct RpropRun {
  Vector theta;
  double value = kNegInf;
  std::vector<double> trace;
  bool converged = false;
};

/// Rprop with weight backtracking (Rprop+), ascending `f`. Step sizes grow by
/// eta_plus on gradient-sign agreement and shrink by eta_minus on a sign flip,
/// with the flipped move reverted and its gradient zeroed for one iteration.
/// Terminates when the loglik improvement stays below tol for `patience`
/// consecutive iterations.
inline RpropRun rprop_maximize(const std::function<double(const Vector&)>& f,
                               const std::function<Vector(const Vector&)>& grad,
                               const Vector& theta0, const RpropConfig& config) {
  config.validate();
  RpropRun run;
  Vector theta = theta0;
  double value = f(theta);
  Vector delta = Vector::Constant(theta.size(), config.delta0);
  Vector prev_grad = Vector::Zero(theta.size());
  Vector last_move = Vector::Zero(theta.size());
  run.trace.push_back(value);
  run.theta = theta;
  run.value = value;
  int small_streak = 0;
  for (int iter = 0; iter < config.max_iter; ++iter) {
    Vector g = grad(theta);
    Vector move = Vector::Zero(theta.size());
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      const double sign_prod = prev_grad(j) * g(j);
      if (sign_prod > 0.0) {
        delta(j) = std::min(delta(j) * config.eta_plus, config.delta_max);
      } else if (sign_prod < 0.0) {
        delta(j) = std::max(delta(j) * config.eta_minus, config.delta_min);
        move(j) = -last_move(j);  // revert
        g(j) = 0.0;
        theta(j) += move(j);
        last_move(j) = move(j);
        continue;
      }
      const double dir = g(j) > 0.0 ? 1.0 : (g(j) < 0.0 ? -1.0 : 0.0);
      move(j) = dir * delta(j);
      theta(j) += move(j);
      last_move(j) = move(j);
    }
    prev_grad = g;
    const double new_value = f(theta);
    const double improvement = new_value - value;
    value = new_value;
    run.trace.push_back(value);
    if (value > run.value || !std::isfinite(run.value)) {
      run.value = value;
      run.theta = theta;
    }
    if (improvement < config.tol) {
      if (++small_streak >= config.patience) {
        run.converged = true;
        break;
      }
    } else {
      small_streak = 0;
    }
  }
  return run;
}

/// Data-scale starting values: loadings at their pattern values, dynamics near
/// 0.5 on the diagonal, variances from the sample spread of y1.
inline ParameterSet starting_parameters(const PanelDataset& data, const ModelSpec& spec) {
  ParameterSet p = neutral_parameters(spec);
  double sum = 0.0, sum2 = 0.0;
  long count = 0;
  for (int i = 0; i < data.n; ++i) {
    for (int t = 0; t < data.t; ++t) {
      for (int j = 0; j < spec.o1; ++j) {
        if (data.observed[i](j, t)) {
          sum += data.y1[i](j, t);
          sum2 += data.y1[i](j, t) * data.y1[i](j, t);
          ++count;
        }
      }
    }
  }
  const double var_y1 =
      count > 1 ? std::max(1e-3, sum2 / count - (sum / count) * (sum / count)) : 1.0;
  double var_y2 = 0.0;
  for (int j = 0; j < spec.o2; ++j) {
    const double m = data.y2.col(j).mean();
    var_y2 += (data.y2.col(j).array() - m).square().sum() / std::max(1, data.n - 1);
  }
  var_y2 = std::max(1e-3, var_y2 / spec.o2);
  for (int s = 0; s < 2; ++s) {
    p.r1[s] = Vector::Constant(spec.o1, 0.5 * var_y1);
    p.q1[s] = Vector::Constant(spec.u1, 0.25 * var_y1);
    p.b3[s] = 0.5 * Matrix::Identity(spec.u1, spec.u1);
  }
  p.r2 = Vector::Constant(spec.o2, 0.5 * var_y2);
  if (spec.p2_free) p.p2 = Vector::Constant(spec.u2, 0.5 * var_y2);
  p.q2 = Vector::Constant(spec.u1, 0.05 * var_y1);
  return p;
}

/// Best-of-n-starts Rprop maximization of the training-window likelihood.
inline FitResult rprop_fit(const PanelDataset& data, const ModelSpec& spec,
                           const RpropConfig& config, std::uint64_t seed,
                           int train_t = -1) {
  config.validate();
  data.validate(spec);
  if (train_t < 0) train_t = data.t / 2;

  const auto f = [&](const Vector& theta) {
    return total_loglik(theta, data, spec, train_t);
  };
  const auto g = [&](const Vector& theta) {
    return numerical_gradient(f, theta, config.grad_step);
  };

  const Vector theta_base = pack(starting_parameters(data, spec), spec);
  FitResult best;
  best.train_t = train_t;
  for (int k = 0; k < config.n_starts; ++k) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(k));
    std::normal_distribution<double> noise(0.0, config.start_spread);
    Vector theta0 = theta_base;
    if (k > 0) {
      for (Eigen::Index j = 0; j < theta0.size(); ++j) theta0(j) += noise(rng);
    }
    RpropRun run = rprop_maximize(f, g, theta0, config);
    if (run.value > best.loglik) {
      best.theta_hat = run.theta;
      best.loglik = run.value;
      best.loglik_trace = run.trace;
      best.start_index = k;
      best.converged = run.converged;
    }
  }
  if (!std::isfinite(best.loglik)) {
    throw EstimationError("rprop_fit: all starts diverged (likelihood -inf throughout)");
  }
  best.params_hat = unpack(best.theta_hat, spec);
  return best;
}

namespace detail {

inline std::vector<SeEntry> se_entries_from_information(const Vector& theta_hat,
                                                        const ModelSpec& spec,
                                                        const Matrix& information) {
  const auto layout = parameter_layout(spec);
  const Vector values = constrained_values(unpack(theta_hat, spec), spec);
  const Vector jac = constrained_jacobian_diag(theta_hat, spec);
  std::vector<SeEntry> out;
  out.reserve(layout.size());

  // Pseudo-inverse over the well-determined subspace: coordinates loading on
  // null (or negative) directions of the information get no SE, the rest keep
  // theirs. Weakly identified models otherwise lose every SE at once.
  const Eigen::Index k = information.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (information + information.transpose()));
  const Vector ev = eig.eigenvalues();
  const Matrix& vec = eig.eigenvectors();
  const double tol = std::max(0.0, ev.maxCoeff()) * k * 1e-12;

  for (size_t j = 0; j < layout.size(); ++j) {
    SeEntry e;
    e.name = layout[j].name;
    e.estimate = values(static_cast<Eigen::Index>(j));
    const Eigen::Index jj = static_cast<Eigen::Index>(j);
    double var = 0.0, null_mass = 0.0;
    for (Eigen::Index m = 0; m < k; ++m) {
      const double load = vec(jj, m) * vec(jj, m);
      if (ev(m) > tol) {
        var += load / ev(m);
      } else {
        null_mass += load;
      }
    }
    // Eigenvectors of a finite-difference information matrix are noisy: a
    // structural null direction bleeds O(1e-3) loadings into every
    // coordinate. A coordinate is only "affected" by the null space when a
    // non-trivial share of its weight lies there, so the cutoff is relative,
    // not machine-precision (a genuinely null coordinate carries mass ~1).
    if (null_mass <= 1e-2 && var > 0.0 && std::isfinite(var)) {
      // Delta method through the packing transform.
      e.se = std::sqrt(var) * std::abs(jac(jj));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

/// OPG information: sum of outer products of per-individual score vectors,
/// scores by central differences of each individual's summed log
/// prediction-error terms.
inline std::vector<SeEntry> opg_standard_errors(const Vector& theta_hat,
                                                const PanelDataset& data,
                                                const ModelSpec& spec, int train_t,
                                                double h = 1e-5) {
  const Eigen::Index k = theta_hat.size();
  Matrix scores_mat = Matrix::Zero(data.n, k);
  const Vector base = per_individual_loglik(theta_hat, data, spec, train_t);
  Vector probe = theta_hat;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double step = h * std::max(1.0, std::abs(theta_hat(j)));
    probe(j) = theta_hat(j) + step;
    const Vector fp = per_individual_loglik(probe, data, spec, train_t);
    probe(j) = theta_hat(j) - step;
    const Vector fm = per_individual_loglik(probe, data, spec, train_t);
    probe(j) = theta_hat(j);
    for (int i = 0; i < data.n; ++i) {
      if (std::isfinite(fp(i)) && std::isfinite(fm(i))) {
        scores_mat(i, j) = (fp(i) - fm(i)) / (2.0 * step);
      } else if (std::isfinite(fp(i)) && std::isfinite(base(i))) {
        scores_mat(i, j) = (fp(i) - base(i)) / step;
      } else if (std::isfinite(fm(i)) && std::isfinite(base(i))) {
        scores_mat(i, j) = (base(i) - fm(i)) / step;
      }
    }
  }
  const Matrix information = scores_mat.transpose() * scores_mat;
  return detail::se_entries_from_information(theta_hat, spec, information);
}

/// Central second differences of f at theta.
inline Matrix numerical_hessian(const std::function<double(const Vector&)>& f,
                                const Vector& theta, double h = 1e-4) {
  const Eigen::Index k = theta.size();
  Matrix hess(k, k);
  Vector step(k);
  for (Eigen::Index j = 0; j < k; ++j) step(j) = h * std::max(1.0, std::abs(theta(j)));
  const double f0 = f(theta);
  Vector probe = theta;
  Vector fpp(k), fmm(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    probe(j) = theta(j) + step(j);
    fpp(j) = f(probe);
    probe(j) = theta(j) - step(j);
    fmm(j) = f(probe);
    probe(j) = theta(j);
    hess(j, j) = (fpp(j) - 2.0 * f0 + fmm(j)) / (step(j) * step(j));
  }
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      probe(a) = theta(a) + step(a);
      probe(b) = theta(b) + step(b);
      const double fab = f(probe);
      probe(b) = theta(b) - step(b);
      const double fab2 = f(probe);
      probe(a) = theta(a) - step(a);
      const double fab4 = f(probe);
      probe(b) = theta(b) + step(b);
      const double fab3 = f(probe);
      probe(a) = theta(a);
      probe(b) = theta(b);
      hess(a, b) = hess(b, a) = (fab - fab2 - fab3 + fab4) / (4.0 * step(a) * step(b));
    }
  }
  return hess;
}

/// SEs from the negative numerical Hessian of the total loglik.
inline std::vector<SeEntry> hessian_standard_errors(const Vector& theta_hat,
                                                    const PanelDataset& data,
                                                    const ModelSpec& spec, int train_t,
                                                    double h = 1e-4) {
  const auto f = [&](const Vector& theta) {
    return total_loglik(theta, data, spec, train_t);
  };
  const Matrix neg_hess = -numerical_hessian(f, theta_hat, h);
  return detail::se_entries_from_information(theta_hat, spec, neg_hess);
}

}  // namespace rsss
