#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mswl/wlasso.hpp"
#include "oracles.hpp"

using namespace mswl;

namespace {

PenaltyVector ones(Eigen::Index p) { return PenaltyVector::ones(p); }

PenaltyVector random_penalty(Eigen::Index p, unsigned seed, double lo = 0.8, double hi = 1.0) {
  std::mt19937_64 eng(seed);
  PenaltyVector pv;
  pv.factors.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
    pv.factors[j] = lo + (hi - lo) * u;
  }
  return pv;
}

}  // namespace

TEST(SoftThreshold, HandCases) {
  EXPECT_DOUBLE_EQ(soft_threshold(3.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(soft_threshold(-0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(soft_threshold(1.7, 0.0), 1.7);
}

TEST(LambdaMax, SingleColumnHandCases) {
  // Unit-norm column with x'y = 2.4: zero subgradient needs lambda >= 2|x'y|.
  Vector x(4);
  x << 0.5, 0.5, 0.5, 0.5;
  Vector y = 2.4 * x;
  Matrix xm = x;
  PenaltyVector w = ones(1);
  EXPECT_NEAR(lambda_max(xm, y, w), 4.8, 1e-12);
  w.factors[0] = 0.8;
  EXPECT_NEAR(lambda_max(xm, y, w), 6.0, 1e-12);
  EXPECT_DOUBLE_EQ(lambda_max(xm, Vector::Zero(4), ones(1)), 0.0);
}

TEST(LambdaMax, ZeroFactorIsAnError) {
  const Matrix x = oracles::random_matrix(10, 3, 1);
  const Vector y = oracles::random_matrix(10, 1, 2);
  PenaltyVector w = ones(3);
  w.factors[1] = 0.0;
  EXPECT_THROW(lambda_max(x, y, w), SolverError);
}

TEST(Fit, OrthonormalClosedForm) {
  const Matrix q = oracles::random_orthonormal(12, 5, 3);
  Vector v(5);
  v << 1.0, -0.3, 2.0, 0.2, -1.4;
  const Vector y = q * v; // q orthonormal, so q.col(j).dot(y) = v[j]
  const double lambda = 1.0;
  const LassoSolution sol = fit(q, y, lambda, ones(5));
  ASSERT_TRUE(sol.converged);
  for (int j = 0; j < 5; ++j)
    EXPECT_NEAR(sol.coefficients[j], soft_threshold(v[j], lambda / 2.0), 1e-10) << "j=" << j;
  EXPECT_NEAR(sol.coefficients[0], 0.5, 1e-10);
}

TEST(Fit, AllZeroAtLambdaMax) {
  const Matrix x = oracles::random_matrix(20, 6, 4);
  const Vector y = oracles::random_matrix(20, 1, 5);
  const PenaltyVector w = random_penalty(6, 6);
  const double lmax = lambda_max(x, y, w);
  const LassoSolution sol = fit(x, y, lmax * 1.0000001, w);
  EXPECT_EQ(support_of(sol.coefficients).size(), 0);
  const LassoSolution sol2 = fit(x, y, lmax * 2.0, w);
  EXPECT_EQ(support_of(sol2.coefficients).size(), 0);
}

TEST(Fit, MatchesProximalGradientOracle) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Matrix x = oracles::random_matrix(30, 8, 100 + seed);
    Vector y = x.leftCols(3).rowwise().sum() + 0.3 * oracles::random_matrix(30, 1, 200 + seed);
    const PenaltyVector w = random_penalty(8, 300 + seed);
    const double lambda = 0.3 * lambda_max(x, y, w);
    const LassoSolution sol = fit(x, y, lambda, w);
    const auto oracle = oracles::prox_gradient_lasso(x, y, lambda, w.factors);
    EXPECT_NEAR(sol.objective, oracle.objective, 1e-8) << "seed=" << seed;
    EXPECT_LE(kkt_residual(x, y, sol.coefficients, lambda, w), 1e-6);
  }
}

TEST(Fit, ObjectiveIsRecomputableAndMonotone) {
  const Matrix x = oracles::random_matrix(25, 7, 8);
  const Vector y = oracles::random_matrix(25, 1, 9);
  const PenaltyVector w = random_penalty(7, 10);
  std::vector<double> objectives;
  FitOptions opts;
  opts.sweep_objectives = &objectives;
  const LassoSolution sol = fit(x, y, 2.0, w, nullptr, opts);
  EXPECT_NEAR(sol.objective, lasso_objective(x, y, sol.coefficients, sol.lambda, w),
              1e-8 * (1.0 + std::abs(sol.objective)));
  ASSERT_GE(objectives.size(), 2u);
  for (std::size_t s = 1; s < objectives.size(); ++s)
    EXPECT_LE(objectives[s], objectives[s - 1] + 1e-9 * (1.0 + std::abs(objectives[s - 1])));
}

TEST(Fit, KktCertificateOnRandomInstances) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    const Eigen::Index n = 10 + seed % 20;
    const Eigen::Index p = 2 + seed % 7;
    const Matrix x = oracles::random_matrix(n, p, 1000 + seed);
    const Vector y = oracles::random_matrix(n, 1, 2000 + seed);
    const PenaltyVector w = random_penalty(p, 3000 + seed, 0.5, 1.0);
    const double lmax = lambda_max(x, y, w);
    for (double frac : {0.9, 0.3, 0.05}) {
      const LassoSolution sol = fit(x, y, frac * lmax, w);
      EXPECT_LE(kkt_residual(x, y, sol.coefficients, frac * lmax, w), 1e-6)
          << "seed=" << seed << " frac=" << frac;
    }
  }
}

TEST(Fit, OrdinaryLassoRecovery) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Matrix x = oracles::random_matrix(24, 6, 400 + seed);
    const Vector y = oracles::random_matrix(24, 1, 500 + seed);
    const double lambda = 0.2 * lambda_max(x, y, ones(6));
    const LassoSolution sol = fit(x, y, lambda, ones(6));
    const auto oracle = oracles::prox_gradient_lasso(x, y, lambda, Vector::Ones(6));
    EXPECT_NEAR(sol.objective, oracle.objective, 1e-8);
  }
}

TEST(Fit, PenaltyScalingEquivariance) {
  const Matrix x = oracles::random_matrix(30, 8, 21);
  const Vector y = oracles::random_matrix(30, 1, 22);
  PenaltyVector w = random_penalty(8, 23, 0.4, 0.9);
  const double lambda = 0.25 * lambda_max(x, y, w);
  const LassoSolution base = fit(x, y, lambda, w);
  const double c = 2.5;
  PenaltyVector scaled;
  scaled.factors = w.factors / c;
  const LassoSolution other = fit(x, y, lambda * c, scaled);
  EXPECT_EQ(support_of(base.coefficients).indices, support_of(other.coefficients).indices);
  EXPECT_LE((base.coefficients - other.coefficients).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Fit, ZeroFactorFeatureSurvives) {
  const Matrix x = oracles::random_matrix(30, 4, 31);
  const Vector y = x.col(2) + 0.1 * oracles::random_matrix(30, 1, 32);
  PenaltyVector w = ones(4);
  w.factors[2] = 0.0;
  const LassoSolution sol = fit(x, y, 1e6, w); // huge lambda kills every penalized feature
  EXPECT_NE(sol.coefficients[2], 0.0);
  for (int j : {0, 1, 3}) EXPECT_EQ(sol.coefficients[j], 0.0);
}

TEST(Fit, RejectsBadInput) {
  Matrix x = oracles::random_matrix(10, 3, 41);
  Vector y = oracles::random_matrix(10, 1, 42);
  x(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fit(x, y, 1.0, ones(3)), SolverError);
  EXPECT_THROW(fit(oracles::random_matrix(10, 3, 43), y, -1.0, ones(3)), SolverError);
}

TEST(SelectFeatures, TargetCountFromPaperFraction) {
  EXPECT_EQ(selection_target_count(0.16, 152), 24);
}

TEST(SelectFeatures, OrthonormalCorrelationOrder) {
  const Matrix q = oracles::random_orthonormal(16, 4, 51);
  Vector v(4);
  v << 4.0, 3.0, 2.0, 1.0;
  const Vector y = q * v;
  const SelectionResult sel = select_features(q, y, ones(4), 0.5, 30);
  ASSERT_EQ(sel.features.size(), 2);
  EXPECT_EQ(sel.features.indices, (std::vector<int>{0, 1}));
  EXPECT_FALSE(sel.flagged);
}

TEST(SelectFeatures, AllZeroTargetsReturnEmptyWithFlag) {
  const Matrix x = oracles::random_matrix(12, 4, 61);
  const SelectionResult sel = select_features(x, Vector::Zero(12), ones(4), 0.5, 25);
  EXPECT_TRUE(sel.features.empty());
  EXPECT_TRUE(sel.flagged);
}

TEST(SelectFeatures, PreconditionsEnforced) {
  const Matrix x = oracles::random_matrix(12, 4, 62);
  const Vector y = oracles::random_matrix(12, 1, 63);
  EXPECT_THROW(select_features(x, y, ones(4), 0.0, 30), SolverError);
  EXPECT_THROW(select_features(x, y, ones(4), 1.0, 30), SolverError);
  EXPECT_THROW(select_features(x, y, ones(4), 0.5, 10), SolverError);
  // round(0.05 * 4) = 0: target count zero is disallowed.
  EXPECT_THROW(select_features(x, y, ones(4), 0.05, 30), SolverError);
}

TEST(SelectFeatures, PathWarmStartConsistency) {
  const Matrix x = oracles::random_matrix(40, 10, 71);
  Vector y = x.leftCols(4).rowwise().sum() + 0.5 * oracles::random_matrix(40, 1, 72);
  const PenaltyVector w = random_penalty(10, 73);
  const SelectionResult sel = select_features(x, y, w, 0.4, 40);
  ASSERT_FALSE(sel.features.empty());
  // Refit the chosen path point cold from zeros: same objective.
  const LassoSolution cold = fit(x, y, sel.lambda, w);
  // And warm-started from a neighboring path solution.
  const LassoSolution neighbor = fit(x, y, sel.lambda * 1.1, w);
  const LassoSolution warm = fit(x, y, sel.lambda, w, &neighbor.coefficients);
  EXPECT_NEAR(cold.objective, warm.objective, 1e-8);
}

TEST(SelectFeatures, Deterministic) {
  const Matrix x = oracles::random_matrix(35, 12, 81);
  const Vector y = oracles::random_matrix(35, 1, 82);
  const PenaltyVector w = random_penalty(12, 83);
  const SelectionResult a = select_features(x, y, w, 0.25, 50);
  const SelectionResult b = select_features(x, y, w, 0.25, 50);
  EXPECT_EQ(a.features.indices, b.features.indices);
  EXPECT_EQ(a.lambda, b.lambda);
}
