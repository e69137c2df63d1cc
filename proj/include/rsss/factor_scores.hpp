#pragma once

#include "rsss/model.hpp"

#include <stdexcept>
#include <string>

namespace rsss {

struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bartlett factor-score weights. F2 * Lambda2 = I is the defining property.
struct FactorScoreWeights {
  Matrix f2;  // u2 x o2
};

/// F2 = (Lambda2' R2^-1 Lambda2)^-1 Lambda2' R2^-1 with diagonal R2.
inline FactorScoreWeights bartlett_weights(const Matrix& lambda2, const Vector& r2) {
  if ((r2.array() <= 0.0).any()) {
    throw EstimationError("bartlett_weights: R2 must be strictly positive diagonal");
  }
  const Matrix lt_rinv = lambda2.transpose() * r2.cwiseInverse().asDiagonal();
  const Matrix gram = lt_rinv * lambda2;  // u2 x u2
  Eigen::FullPivLU<Matrix> lu(gram);
  if (!lu.isInvertible()) {
    // Name the first factor whose column contributes nothing.
    for (int j = 0; j < lambda2.cols(); ++j) {
      if (lambda2.col(j).cwiseAbs().maxCoeff() == 0.0) {
        throw EstimationError("bartlett_weights: factor " + std::to_string(j + 1) +
                              " has an all-zero loading column");
      }
    }
    throw EstimationError("bartlett_weights: Lambda2' R2^-1 Lambda2 is singular");
  }
  FactorScoreWeights w;
  w.f2 = lu.solve(lt_rinv);
  return w;
}

/// Per-individual scores eta2_hat_i = F2 y2_i; returns n x u2.
inline Matrix score(const Matrix& y2, const FactorScoreWeights& weights) {
  return y2 * weights.f2.transpose();
}

}  // namespace rsss
