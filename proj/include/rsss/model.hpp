#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rsss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kRegimes = 2;

/// Numerically saturating sigmoid.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct ConstraintError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Loading matrix pattern: entries are either fixed to `value(r,c)` or free
/// (free entries use `value` only as a neutral starting point).
struct LoadingPattern {
  Matrix value;
  BoolMatrix free;

  static LoadingPattern fixed_identity(int rows, int cols) {
    LoadingPattern p;
    p.value = Matrix::Identity(rows, cols);
    p.free = BoolMatrix::Constant(rows, cols, false);
    return p;
  }

  /// One factor per contiguous item block, all loadings fixed to 1,
  /// no cross-loadings. `items_per_factor[j]` items load on factor j.
  static LoadingPattern simple_structure(const std::vector<int>& items_per_factor,
                                         bool free_non_anchor = false) {
    int rows = 0;
    for (int k : items_per_factor) rows += k;
    const int cols = static_cast<int>(items_per_factor.size());
    LoadingPattern p;
    p.value = Matrix::Zero(rows, cols);
    p.free = BoolMatrix::Constant(rows, cols, false);
    int r = 0;
    for (int j = 0; j < cols; ++j) {
      for (int k = 0; k < items_per_factor[j]; ++k, ++r) {
        p.value(r, j) = 1.0;
        p.free(r, j) = free_non_anchor && k > 0;
      }
    }
    return p;
  }
};

/// Model dimensions, sparsity masks and identification constraints.
struct ModelSpec {
  int o1 = 0;  // time-dependent observed variables
  int u1 = 0;  // time-dependent latent factors
  int o2 = 0;  // time-invariant observed variables
  int u2 = 0;  // time-invariant latent factors

  LoadingPattern loading1;  // o1 x u1
  LoadingPattern loading2;  // o2 x u2

  std::vector<bool> gamma4_free;  // size u1; false entries pinned to 0

  bool diagonal_dynamics = true;  // B3s, B4s restricted to diagonal

  // Class-invariance: regime-2 block tied to regime-1.
  bool shared_lambda1 = true;
  bool shared_r1 = true;
  bool shared_q1 = true;

  bool ordered_intercepts = true;  // b1[2] = b1[1] + positive offset

  bool gamma1_free = false;
  double gamma1_fixed = 4.60;
  bool p12_free = false;
  double p12_fixed = 1e-12;
  bool p2_free = true;
  Vector p2_fixed;  // used when !p2_free; defaults to ones

  // Interaction term of the switching model with u2 > 1 (uses the first
  // between-factor score); off by default, the u2 == 1 case is always on.
  bool interaction_multi_u2 = false;

  double initial_regime1_prob = 1.0;

  void validate() const {
    if (o1 <= 0 || u1 <= 0 || o2 <= 0 || u2 <= 0) {
      throw ConstraintError("ModelSpec: all dimensions must be positive");
    }
    if (loading1.value.rows() != o1 || loading1.value.cols() != u1 ||
        loading1.free.rows() != o1 || loading1.free.cols() != u1) {
      throw ConstraintError("ModelSpec: loading1 pattern shape mismatch");
    }
    if (loading2.value.rows() != o2 || loading2.value.cols() != u2 ||
        loading2.free.rows() != o2 || loading2.free.cols() != u2) {
      throw ConstraintError("ModelSpec: loading2 pattern shape mismatch");
    }
    if (static_cast<int>(gamma4_free.size()) != u1) {
      throw ConstraintError("ModelSpec: gamma4_free must have u1 entries");
    }
    auto check_anchored = [](const LoadingPattern& p, const char* which) {
      for (int j = 0; j < p.value.cols(); ++j) {
        bool anchored = false;
        for (int r = 0; r < p.value.rows(); ++r) {
          if (!p.free(r, j) && p.value(r, j) != 0.0) anchored = true;
        }
        if (!anchored) {
          throw ConstraintError(std::string("ModelSpec: factor ") +
                                std::to_string(j + 1) + " of " + which +
                                " has no fixed nonzero loading");
        }
      }
    };
    check_anchored(loading1, "loading1");
    check_anchored(loading2, "loading2");
    if (!p2_free && p2_fixed.size() != u2) {
      throw ConstraintError("ModelSpec: p2_fixed must have u2 entries");
    }
    if (initial_regime1_prob < 0.0 || initial_regime1_prob > 1.0) {
      throw ConstraintError("ModelSpec: initial_regime1_prob outside [0,1]");
    }
  }
};

/// All model parameters on the constrained (natural) scale. Covariances are
/// stored as diagonals. Regime-indexed containers always hold both regimes;
/// class-invariant blocks simply carry identical copies.
struct ParameterSet {
  std::array<Matrix, 2> lambda1;  // o1 x u1
  std::array<Vector, 2> r1;       // o1 diagonal
  Matrix lambda2;                 // o2 x u2
  Vector r2;                      // o2 diagonal
  Vector p2;                      // u2 diagonal
  std::array<Vector, 2> b1;       // u1
  std::array<Matrix, 2> b2;       // u1 x u2
  std::array<Matrix, 2> b3;       // u1 x u1
  std::array<Matrix, 2> b4;       // u1 x u1
  std::array<Vector, 2> q1;       // u1 diagonal
  Vector q2;                      // u1 diagonal
  double gamma1 = 0.0;
  Vector gamma2;  // u2
  Vector gamma3;  // u1
  Vector gamma4;  // u1, masked entries are exactly 0
  double p12 = 1e-12;
};

enum class Transform { Identity, Log, OrderedOffset, Logit };

struct ParamEntry {
  std::string name;
  Transform transform = Transform::Identity;
};

/// Parameter set with every fixed entry at its spec value and every free
/// entry at a neutral starting point (variances 1, effects 0, anchors 1).
inline ParameterSet neutral_parameters(const ModelSpec& spec) {
  ParameterSet p;
  for (int s = 0; s < 2; ++s) {
    p.lambda1[s] = spec.loading1.value;
    p.r1[s] = Vector::Ones(spec.o1);
    p.b1[s] = Vector::Zero(spec.u1);
    p.b2[s] = Matrix::Zero(spec.u1, spec.u2);
    p.b3[s] = Matrix::Zero(spec.u1, spec.u1);
    p.b4[s] = Matrix::Zero(spec.u1, spec.u1);
    p.q1[s] = Vector::Ones(spec.u1);
  }
  p.lambda2 = spec.loading2.value;
  p.r2 = Vector::Ones(spec.o2);
  p.p2 = spec.p2_free ? Vector::Ones(spec.u2).eval()
                      : (spec.p2_fixed.size() == spec.u2 ? spec.p2_fixed
                                                         : Vector::Ones(spec.u2).eval());
  p.q2 = Vector::Ones(spec.u1);
  p.gamma1 = spec.gamma1_fixed;
  p.gamma2 = Vector::Zero(spec.u2);
  p.gamma3 = Vector::Zero(spec.u1);
  p.gamma4 = Vector::Zero(spec.u1);
  p.p12 = spec.p12_fixed;
  if (spec.ordered_intercepts) {
    p.b1[1] = Vector::Constant(spec.u1, 0.1);  // keep the offset strictly positive
  }
  return p;
}

namespace detail {

/// Visits every free scalar in the canonical packing order.
/// Callback: f(name, transform, value_ref, reference_value) where
/// reference_value is the lower intercept for OrderedOffset entries.
template <typename Params, typename F>
void visit_free(Params& p, const ModelSpec& spec, F&& f) {
  auto idx = [](int i) { return std::to_string(i + 1); };

  const int n_lambda1_regimes = spec.shared_lambda1 ? 1 : 2;
  for (int s = 0; s < n_lambda1_regimes; ++s) {
    for (int c = 0; c < spec.u1; ++c) {
      for (int r = 0; r < spec.o1; ++r) {
        if (spec.loading1.free(r, c)) {
          f("lambda1[s" + idx(s) + "](" + idx(r) + "," + idx(c) + ")",
            Transform::Identity, p.lambda1[s](r, c), 0.0);
        }
      }
    }
  }
  const int n_r1_regimes = spec.shared_r1 ? 1 : 2;
  for (int s = 0; s < n_r1_regimes; ++s) {
    for (int r = 0; r < spec.o1; ++r) {
      f("r1[s" + idx(s) + "][" + idx(r) + "]", Transform::Log, p.r1[s](r), 0.0);
    }
  }
  for (int c = 0; c < spec.u2; ++c) {
    for (int r = 0; r < spec.o2; ++r) {
      if (spec.loading2.free(r, c)) {
        f("lambda2(" + idx(r) + "," + idx(c) + ")", Transform::Identity,
          p.lambda2(r, c), 0.0);
      }
    }
  }
  for (int r = 0; r < spec.o2; ++r) {
    f("r2[" + idx(r) + "]", Transform::Log, p.r2(r), 0.0);
  }
  if (spec.p2_free) {
    for (int r = 0; r < spec.u2; ++r) {
      f("p2[" + idx(r) + "]", Transform::Log, p.p2(r), 0.0);
    }
  }
  for (int r = 0; r < spec.u1; ++r) {
    f("b1[s1][" + idx(r) + "]", Transform::Identity, p.b1[0](r), 0.0);
  }
  for (int r = 0; r < spec.u1; ++r) {
    f("b1[s2][" + idx(r) + "]",
      spec.ordered_intercepts ? Transform::OrderedOffset : Transform::Identity,
      p.b1[1](r), p.b1[0](r));
  }
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < spec.u2; ++c) {
      for (int r = 0; r < spec.u1; ++r) {
        f("b2[s" + idx(s) + "](" + idx(r) + "," + idx(c) + ")",
          Transform::Identity, p.b2[s](r, c), 0.0);
      }
    }
  }
  auto visit_dyn = [&](const char* name, std::array<Matrix, 2>& m) {
    for (int s = 0; s < 2; ++s) {
      if (spec.diagonal_dynamics) {
        for (int r = 0; r < spec.u1; ++r) {
          f(std::string(name) + "[s" + idx(s) + "][" + idx(r) + "]",
            Transform::Identity, m[s](r, r), 0.0);
        }
      } else {
        for (int c = 0; c < spec.u1; ++c) {
          for (int r = 0; r < spec.u1; ++r) {
            f(std::string(name) + "[s" + idx(s) + "](" + idx(r) + "," + idx(c) + ")",
              Transform::Identity, m[s](r, c), 0.0);
          }
        }
      }
    }
  };
  visit_dyn("b3", p.b3);
  visit_dyn("b4", p.b4);
  const int n_q1_regimes = spec.shared_q1 ? 1 : 2;
  for (int s = 0; s < n_q1_regimes; ++s) {
    for (int r = 0; r < spec.u1; ++r) {
      f("q1[s" + idx(s) + "][" + idx(r) + "]", Transform::Log, p.q1[s](r), 0.0);
    }
  }
  for (int r = 0; r < spec.u1; ++r) {
    f("q2[" + idx(r) + "]", Transform::Log, p.q2(r), 0.0);
  }
  if (spec.gamma1_free) {
    f("gamma1", Transform::Identity, p.gamma1, 0.0);
  }
  for (int r = 0; r < spec.u2; ++r) {
    f("gamma2[" + idx(r) + "]", Transform::Identity, p.gamma2(r), 0.0);
  }
  for (int r = 0; r < spec.u1; ++r) {
    f("gamma3[" + idx(r) + "]", Transform::Identity, p.gamma3(r), 0.0);
  }
  for (int r = 0; r < spec.u1; ++r) {
    if (spec.gamma4_free[r]) {
      f("gamma4[" + idx(r) + "]", Transform::Identity, p.gamma4(r), 0.0);
    }
  }
  if (spec.p12_free) {
    f("p12", Transform::Logit, p.p12, 0.0);
  }
}

/// Copies shared blocks from regime 1 to regime 2 and re-applies fixed values.
inline void apply_constraints(ParameterSet& p, const ModelSpec& spec) {
  if (spec.shared_lambda1) p.lambda1[1] = p.lambda1[0];
  if (spec.shared_r1) p.r1[1] = p.r1[0];
  if (spec.shared_q1) p.q1[1] = p.q1[0];
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < spec.u1; ++c) {
      for (int r = 0; r < spec.o1; ++r) {
        if (!spec.loading1.free(r, c)) p.lambda1[s](r, c) = spec.loading1.value(r, c);
      }
    }
  }
  for (int c = 0; c < spec.u2; ++c) {
    for (int r = 0; r < spec.o2; ++r) {
      if (!spec.loading2.free(r, c)) p.lambda2(r, c) = spec.loading2.value(r, c);
    }
  }
  if (!spec.p2_free) p.p2 = spec.p2_fixed;
  if (!spec.gamma1_free) p.gamma1 = spec.gamma1_fixed;
  if (!spec.p12_free) p.p12 = spec.p12_fixed;
  for (int r = 0; r < spec.u1; ++r) {
    if (!spec.gamma4_free[r]) p.gamma4(r) = 0.0;
  }
}

}  // namespace detail

inline std::vector<ParamEntry> parameter_layout(const ModelSpec& spec) {
  std::vector<ParamEntry> entries;
  ParameterSet p = neutral_parameters(spec);
  detail::visit_free(p, spec,
                     [&](const std::string& name, Transform tf, double&, double) {
                       entries.push_back({name, tf});
                     });
  return entries;
}

inline int free_parameter_count(const ModelSpec& spec) {
  return static_cast<int>(parameter_layout(spec).size());
}

/// Constrained parameters -> unconstrained optimization vector. Variances go
/// to the log scale; with the ordering constraint enabled the second-regime
/// intercept is stored as log(b1[2] - b1[1]).
inline Vector pack(const ParameterSet& params, const ModelSpec& spec) {
  std::vector<double> theta;
  ParameterSet copy = params;
  detail::visit_free(
      copy, spec,
      [&](const std::string& name, Transform tf, double& value, double ref) {
        switch (tf) {
          case Transform::Identity:
            theta.push_back(value);
            break;
          case Transform::Log:
            if (!(value > 0.0)) {
              throw ConstraintError("pack: non-positive variance at " + name);
            }
            theta.push_back(std::log(value));
            break;
          case Transform::OrderedOffset:
            if (!(value > ref)) {
              throw ConstraintError("pack: ordering constraint violated at " + name);
            }
            theta.push_back(std::log(value - ref));
            break;
          case Transform::Logit:
            if (!(value > 0.0 && value < 1.0)) {
              throw ConstraintError("pack: probability outside (0,1) at " + name);
            }
            theta.push_back(logit(value));
            break;
        }
      });
  for (int r = 0; r < spec.u1; ++r) {
    if (!spec.gamma4_free[r] && params.gamma4(r) != 0.0) {
      throw ConstraintError("pack: masked gamma4[" + std::to_string(r + 1) +
                            "] must be 0");
    }
  }
  return Eigen::Map<Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
}

/// Inverse of pack; fixed entries are filled from the spec.
inline ParameterSet unpack(const Vector& theta, const ModelSpec& spec) {
  ParameterSet p = neutral_parameters(spec);
  Eigen::Index k = 0;
  detail::visit_free(
      p, spec,
      [&](const std::string&, Transform tf, double& value, double ref) {
        if (k >= theta.size()) {
          throw ConstraintError("unpack: theta shorter than layout");
        }
        const double t = theta(k++);
        switch (tf) {
          case Transform::Identity:
            value = t;
            break;
          case Transform::Log:
            value = std::exp(t);
            break;
          case Transform::OrderedOffset:
            value = ref + std::exp(t);
            break;
          case Transform::Logit:
            value = sigmoid(t);
            break;
        }
      });
  if (k != theta.size()) {
    throw ConstraintError("unpack: theta length " + std::to_string(theta.size()) +
                          " does not match layout size " + std::to_string(k));
  }
  detail::apply_constraints(p, spec);
  return p;
}

/// d(constrained)/d(theta_j) at theta, one entry per coordinate (diagonal
/// delta-method factor used when reporting standard errors).
inline Vector constrained_jacobian_diag(const Vector& theta, const ModelSpec& spec) {
  ParameterSet p = unpack(theta, spec);
  Vector jac(theta.size());
  Eigen::Index k = 0;
  detail::visit_free(p, spec,
                     [&](const std::string&, Transform tf, double& value, double ref) {
                       switch (tf) {
                         case Transform::Identity:
                           jac(k) = 1.0;
                           break;
                         case Transform::Log:
                           jac(k) = value;  // d exp(t)/dt
                           break;
                         case Transform::OrderedOffset:
                           jac(k) = value - ref;
                           break;
                         case Transform::Logit:
                           jac(k) = value * (1.0 - value);
                           break;
                       }
                       ++k;
                     });
  return jac;
}

/// Free parameter values on the natural scale, in layout order.
inline Vector constrained_values(const ParameterSet& params, const ModelSpec& spec) {
  std::vector<double> vals;
  ParameterSet copy = params;
  detail::visit_free(copy, spec,
                     [&](const std::string&, Transform, double& value, double) {
                       vals.push_back(value);
                     });
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

/// One-step regime transition distribution, Markov-switching model. Returns
/// (Pr[S_t=1 | s_prev], Pr[S_t=2 | s_prev]). From regime 2 the return
/// probability is the fixed constant p12 (near-absorbing second regime).
inline std::pair<double, double> transition_probability(const Vector& eta1_prev,
                                                        const Vector& eta2,
                                                        const ParameterSet& params,
                                                        const ModelSpec& spec,
                                                        int s_prev) {
  if (s_prev == 1) {
    return {params.p12, 1.0 - params.p12};
  }
  double x = params.gamma1 + params.gamma2.dot(eta2) + params.gamma3.dot(eta1_prev);
  if (spec.u2 == 1 || spec.interaction_multi_u2) {
    x += eta2(0) * params.gamma4.dot(eta1_prev);
  }
  const double p1 = sigmoid(x);
  return {p1, 1.0 - p1};
}

/// Random valid parameter set (for property tests and optimizer starts).
inline ParameterSet random_parameters(const ModelSpec& spec, std::mt19937_64& rng,
                                      double spread = 0.5) {
  std::normal_distribution<double> gauss(0.0, spread);
  std::uniform_real_distribution<double> unif(0.1, 1.5);
  ParameterSet p = neutral_parameters(spec);
  detail::visit_free(p, spec,
                     [&](const std::string&, Transform tf, double& value, double ref) {
                       switch (tf) {
                         case Transform::Identity:
                           value = gauss(rng);
                           break;
                         case Transform::Log:
                           value = unif(rng);
                           break;
                         case Transform::OrderedOffset:
                           value = ref + unif(rng);
                           break;
                         case Transform::Logit:
                           value = 0.5 * unif(rng);
                           break;
                       }
                     });
  detail::apply_constraints(p, spec);
  return p;
}

}  // namespace rsss
