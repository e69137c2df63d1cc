#include "rsss/factor_scores.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace rsss;

TEST_CASE("identity loadings give identity weights") {
  const auto w = bartlett_weights(Matrix::Identity(3, 3), Vector::Ones(3));
  CHECK(w.f2.isApprox(Matrix::Identity(3, 3), 1e-12));
}

TEST_CASE("two parallel unit loadings average the indicators") {
  Matrix lambda(2, 1);
  lambda << 1.0, 1.0;
  const double sigma2 = 0.37;
  const auto w = bartlett_weights(lambda, Vector::Constant(2, sigma2));
  CHECK(w.f2(0, 0) == Catch::Approx(0.5).margin(1e-12));
  CHECK(w.f2(0, 1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("a zero loading column is rejected with the factor named") {
  Matrix lambda(3, 2);
  lambda << 1, 0, 1, 0, 1, 0;
  REQUIRE_THROWS_WITH(bartlett_weights(lambda, Vector::Ones(3)),
                      Catch::Matchers::ContainsSubstring("factor 2"));
}

TEST_CASE("non-positive residual variances are rejected") {
  REQUIRE_THROWS_AS(bartlett_weights(Matrix::Identity(2, 2), Vector::Zero(2)),
                    EstimationError);
}

TEST_CASE("F2 Lambda2 = I for random valid inputs") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    const int o2 = 4, u2 = 2;
    Matrix lambda(o2, u2);
    for (int r = 0; r < o2; ++r) {
      for (int c = 0; c < u2; ++c) lambda(r, c) = g(rng);
    }
    lambda(0, 0) = 1.0;
    lambda(2, 1) = 1.0;
    Vector r2(o2);
    for (int r = 0; r < o2; ++r) r2(r) = u(rng);
    const auto w = bartlett_weights(lambda, r2);
    CHECK((w.f2 * lambda - Matrix::Identity(u2, u2)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("scores are conditionally unbiased: noiseless data is recovered exactly") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix lambda(3, 1);
  lambda << 1.0, 0.8, 1.3;
  const auto w = bartlett_weights(lambda, Vector::Constant(3, 0.5));
  const int n = 50;
  Matrix eta(n, 1), y2(n, 3);
  for (int i = 0; i < n; ++i) {
    eta(i, 0) = g(rng);
    y2.row(i) = (lambda * eta.row(i).transpose()).transpose();
  }
  const Matrix scores = score(y2, w);
  CHECK((scores - eta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("identity weights pass indicators through and zero maps to zero") {
  FactorScoreWeights w;
  w.f2 = Matrix::Identity(2, 2);
  Matrix y2(2, 2);
  y2 << 1.5, -0.5, 0.0, 0.0;
  const Matrix s = score(y2, w);
  CHECK(s.isApprox(y2, 1e-14));
  CHECK(s.row(1).cwiseAbs().maxCoeff() == 0.0);
}
