#pragma once

#include "rsss/factor_scores.hpp"
#include "rsss/model.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace rsss {

/// Confusion-matrix summaries with regime 2 as the positive class.
/// Sensitivity/specificity are absent when their denominator is empty.
struct WindowMetrics {
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  long tp = 0, fn = 0, tn = 0, fp = 0;
};

struct RegimeMetrics {
  WindowMetrics observed;
  WindowMetrics forecast;
};

namespace detail {

inline WindowMetrics confusion_metrics(long tp, long fn, long tn, long fp) {
  WindowMetrics m;
  m.tp = tp;
  m.fn = fn;
  m.tn = tn;
  m.fp = fp;
  const long total = tp + fn + tn + fp;
  if (total > 0) m.accuracy = static_cast<double>(tp + tn) / total;
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / (tp + fn);
  if (tn + fp > 0) m.specificity = static_cast<double>(tn) / (tn + fp);
  return m;
}

}  // namespace detail

/// Pooled 2x2 confusion counts over (i,t), split at `split_t` (1-based; the
/// observed window is t <= split_t). Predicts regime 2 iff pr2 > cutoff.
inline RegimeMetrics regime_metrics(const Matrix& pred_pr2,
                                    const Eigen::MatrixXi& true_regimes, int split_t,
                                    double cutoff = 0.5) {
  if (pred_pr2.rows() != true_regimes.rows() || pred_pr2.cols() != true_regimes.cols()) {
    throw ConstraintError("regime_metrics: shape mismatch");
  }
  if (!(cutoff > 0.0 && cutoff < 1.0)) {
    throw ConstraintError("regime_metrics: cutoff must lie in (0,1)");
  }
  long counts[2][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}};  // [window][tp,fn,tn,fp]
  for (int i = 0; i < pred_pr2.rows(); ++i) {
    for (int t = 0; t < pred_pr2.cols(); ++t) {
      const int w = (t + 1) <= split_t ? 0 : 1;
      const bool pred2 = pred_pr2(i, t) > cutoff;
      const bool true2 = true_regimes(i, t) == 2;
      if (true2 && pred2) ++counts[w][0];
      else if (true2 && !pred2) ++counts[w][1];
      else if (!true2 && !pred2) ++counts[w][2];
      else ++counts[w][3];
    }
  }
  RegimeMetrics out;
  out.observed = detail::confusion_metrics(counts[0][0], counts[0][1], counts[0][2],
                                           counts[0][3]);
  out.forecast = detail::confusion_metrics(counts[1][0], counts[1][1], counts[1][2],
                                           counts[1][3]);
  return out;
}

/// Quadratic score per forecast occasion:
/// delta_t = (1/N) sum_i sum_j (eta_hat_itj - eta_itj)^2.
struct ScoreSeries {
  std::vector<int> t;          // 1-based occasions
  std::vector<double> delta;
};

inline ScoreSeries score_function(const std::vector<Matrix>& pred_eta,
                                  const std::vector<Matrix>& true_eta, int t_begin,
                                  int t_end) {
  if (pred_eta.size() != true_eta.size()) {
    throw ConstraintError("score_function: panel size mismatch");
  }
  const int n = static_cast<int>(pred_eta.size());
  ScoreSeries out;
  for (int t = t_begin; t <= t_end; ++t) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      if (pred_eta[i].rows() != true_eta[i].rows() ||
          pred_eta[i].cols() != true_eta[i].cols()) {
        throw ConstraintError("score_function: shape mismatch at individual " +
                              std::to_string(i + 1));
      }
      acc += (pred_eta[i].col(t - 1) - true_eta[i].col(t - 1)).squaredNorm();
    }
    out.t.push_back(t);
    out.delta.push_back(acc / n);
  }
  return out;
}

/// Per-parameter replication statistics against the truth.
struct RecoveryRow {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
};

struct RecoveryStats {
  std::vector<RecoveryRow> rows;
  int used_replications = 0;
  int failed_replications = 0;
};

/// `estimates` holds one constrained free-parameter vector per successful
/// replication (layout order); rows with non-finite entries are excluded.
inline RecoveryStats recovery_stats(const std::vector<Vector>& estimates,
                                    const ParameterSet& truth, const ModelSpec& spec) {
  const auto layout = parameter_layout(spec);
  const Vector truth_vals = constrained_values(truth, spec);
  std::vector<const Vector*> usable;
  int failed = 0;
  for (const Vector& e : estimates) {
    if (e.size() == truth_vals.size() && e.allFinite()) {
      usable.push_back(&e);
    } else {
      ++failed;
    }
  }
  if (usable.size() < 2) {
    throw EstimationError("recovery_stats: need at least 2 successful replications");
  }
  const int r = static_cast<int>(usable.size());
  RecoveryStats out;
  out.used_replications = r;
  out.failed_replications = failed;
  for (Eigen::Index j = 0; j < truth_vals.size(); ++j) {
    RecoveryRow row;
    row.name = layout[static_cast<size_t>(j)].name;
    row.truth = truth_vals(j);
    double sum = 0.0, sq_err = 0.0;
    for (const Vector* e : usable) sum += (*e)(j);
    row.mean = sum / r;
    row.bias = row.mean - row.truth;
    double ss = 0.0;
    for (const Vector* e : usable) {
      ss += ((*e)(j)-row.mean) * ((*e)(j)-row.mean);
      sq_err += ((*e)(j)-row.truth) * ((*e)(j)-row.truth);
    }
    row.sd = std::sqrt(ss / (r - 1));
    row.rmse = std::sqrt(sq_err / r);
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace rsss
